"""Mean-field characteristic flow for an empirical measure of N particles.

Each particle carries its phase point ``z = (x1, x2, v1, v2)`` and the
accumulated velocity divergence ``L(t) = int_0^t div_v(F^N * mu + G^N) ds``
along its characteristic, so the transported density at the particle is
``f0(z(0)) * exp(-L(t))``.

Forces are summed over same-or-adjacent cells of a grid with cell size 2R.
The per-particle sum runs in one canonical order (ascending particle index
by default), so the result does not depend on the grid, on thread count, or
on whether the all-pairs reference path is used.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numba import njit, prange

from .kernels import CutoffForce, MollifiedDrive, pair_force, smoothed_drive
from .initial import InitialDensity

log = logging.getLogger(__name__)


class StaleGridError(RuntimeError):
    """Neighbour grid was built for positions other than the current ones."""


class PhasePoint(NamedTuple):
    x: np.ndarray
    v: np.ndarray


# ---------------------------------------------------------------------------
# compiled field evaluation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _pair_sum(i, z, nbrs, fp, ax, ay, tr):
    # running sums continue across calls so the addition order is one sequence
    xi = z[i, 0]
    yi = z[i, 1]
    ui = z[i, 2]
    wi = z[i, 3]
    for k in range(nbrs.shape[0]):
        j = nbrs[k]
        if j == i:
            continue
        fx, fy, t = pair_force(xi - z[j, 0], yi - z[j, 1], ui - z[j, 2], wi - z[j, 3], fp)
        ax += fx
        ay += fy
        tr += t
    return ax, ay, tr


@njit(cache=True)
def _run_sum(i, z, lo, hi, fp, ax, ay, tr):
    xi = z[i, 0]
    yi = z[i, 1]
    ui = z[i, 2]
    wi = z[i, 3]
    for j in range(lo, hi):
        if j == i:
            continue
        fx, fy, t = pair_force(xi - z[j, 0], yi - z[j, 1], ui - z[j, 2], wi - z[j, 3], fp)
        ax += fx
        ay += fy
        tr += t
    return ax, ay, tr


@njit(cache=True)
def _finish(i, z, weight, ax, ay, tr, dp, qx, qy, qw, out):
    gx, gy = smoothed_drive(z[i, 0], z[i, 1], dp, qx, qy, qw)
    out[i, 0] = weight * ax + gx - z[i, 2]
    out[i, 1] = weight * ay + gy - z[i, 3]
    out[i, 2] = weight * tr - 2.0


@njit(parallel=True, cache=True)
def _field_grid(z, weight, fp, interact, dp, qx, qy, qw, members, cell_of, rows):
    # Work on a copy sorted by cell (memory locality). A row of three cells
    # (cx + a, cy-1..cy+1) is one contiguous run of the sorted copy; the
    # run bounds of every occupied cell are precomputed in ``rows``.
    n = z.shape[0]
    zs = np.empty_like(z)
    for q in range(n):
        zs[q] = z[members[q]]
    outs = np.empty((n, 3))
    for q in prange(n):
        ax = 0.0
        ay = 0.0
        tr = 0.0
        if interact:
            c = cell_of[q]
            for a in range(3):
                ax, ay, tr = _run_sum(q, zs, rows[c, 2 * a], rows[c, 2 * a + 1], fp, ax, ay, tr)
        _finish(q, zs, weight, ax, ay, tr, dp, qx, qy, qw, outs)
    out = np.empty((n, 3))
    for q in range(n):
        out[members[q]] = outs[q]
    return out


@njit(parallel=True, cache=True)
def _field_all_pairs(z, weight, fp, interact, dp, qx, qy, qw, order):
    n = z.shape[0]
    out = np.empty((n, 3))
    for i in prange(n):
        ax = 0.0
        ay = 0.0
        tr = 0.0
        if interact:
            ax, ay, tr = _pair_sum(i, z, order, fp, ax, ay, tr)
        _finish(i, z, weight, ax, ay, tr, dp, qx, qy, qw, out)
    return out


# ---------------------------------------------------------------------------
# neighbour grid
# ---------------------------------------------------------------------------

@njit(cache=True)
def _grid_arrays(key, order_key):
    # members sorted by the unique order_key, then the occupied cells, the
    # cell of each sorted position and the three neighbour-row runs per cell
    n = key.shape[0]
    members = np.argsort(order_key)
    ncell = 0
    for q in range(n):
        if q == 0 or key[members[q]] != key[members[q - 1]]:
            ncell += 1
    keys = np.empty(ncell, np.int64)
    starts = np.empty(ncell + 1, np.int64)
    cell_of = np.empty(n, np.int64)
    c = -1
    for q in range(n):
        k = key[members[q]]
        if q == 0 or k != keys[c]:
            c += 1
            keys[c] = k
            starts[c] = q
        cell_of[q] = c
    starts[ncell] = n
    return members, keys, starts, cell_of


@njit(cache=True)
def _grid_rows(keys, starts, stride):
    # targets rise with c, so each bound is a monotone pointer sweep
    m = keys.shape[0]
    rows = np.empty((m, 6), np.int64)
    ptr = np.zeros(6, np.int64)
    for c in range(m):
        for a in range(3):
            base = keys[c] + (a - 1) * stride
            for b in range(2):
                target = base - 1 if b == 0 else base + 2
                p = ptr[2 * a + b]
                while p < m and keys[p] < target:
                    p += 1
                ptr[2 * a + b] = p
                rows[c, 2 * a + b] = starts[p]
    return rows


@dataclass(frozen=True)
class NeighborGrid:
    """Cell list over positions with cells of side ``cell_size`` (= 2R).

    Occupied cells are stored sorted by an integer key
    ``cx * stride + cy``; ``members[starts[p]:starts[p+1]]`` lists the
    particles of the ``p``-th occupied cell in ascending ``rank`` (by
    default the particle index). Forces are summed over neighbour cells in
    lexicographic cell order and by rank within a cell, i.e. in the order of
    ``members``.
    """

    cell_size: float
    origin: np.ndarray
    stride: int
    cell_key: np.ndarray
    keys: np.ndarray
    starts: np.ndarray
    members: np.ndarray
    positions: np.ndarray = field(repr=False)
    cell_of: np.ndarray = field(repr=False, default=None)
    rows: np.ndarray = field(repr=False, default=None)

    @classmethod
    def build(cls, positions, cell_size: float, rank=None) -> "NeighborGrid":
        pos = np.array(positions, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pos)):
            raise FloatingPointError("non-finite particle positions")
        origin = pos.min(axis=0)
        c = np.floor((pos - origin) / cell_size).astype(np.int64)
        stride = int(c[:, 1].max()) + 3
        key = c[:, 0] * stride + c[:, 1]
        n = len(pos)
        rank = np.arange(n, dtype=np.int64) if rank is None else np.asarray(rank, np.int64)
        if (int(key.max()) + 1) * n < 2**62:
            members, keys, starts, cell_of = _grid_arrays(key, key * n + rank)
        else:  # composite key would overflow; same order via lexsort
            members = np.lexsort((rank, key))
            keys, first = np.unique(key[members], return_index=True)
            starts = np.append(first, n).astype(np.int64)
            cell_of = np.repeat(np.arange(len(keys), dtype=np.int64), np.diff(starts))
        rows = _grid_rows(keys, starts, stride)
        return cls(float(cell_size), origin, stride, key, keys, starts, members, pos,
                   cell_of, rows)

    def cells(self) -> dict:
        """Hash-map view: integer cell coordinates -> particle indices."""
        out = {}
        for p, k in enumerate(self.keys):
            cx, cy = divmod(int(k), self.stride)
            out[(cx, cy)] = self.members[self.starts[p]:self.starts[p + 1]]
        return out

    def candidates(self, i: int) -> np.ndarray:
        """Particles in the 3x3 block around particle ``i``, in summation order."""
        found = []
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                k = self.cell_key[i] + a * self.stride + b
                p = np.searchsorted(self.keys, k)
                if p < len(self.keys) and self.keys[p] == k:
                    found.append(self.members[self.starts[p]:self.starts[p + 1]])
        return np.concatenate(found)

    def is_current(self, positions) -> bool:
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        return pos.shape == self.positions.shape and np.array_equal(pos, self.positions)


# ---------------------------------------------------------------------------
# ensemble
# ---------------------------------------------------------------------------

@dataclass
class ParticleEnsemble:
    """N equally weighted phase points; ``weight * n`` is the total mass."""

    z: np.ndarray
    weight: float
    log_jacobian: np.ndarray | None = None
    time: float = 0.0
    initial: np.ndarray | None = None

    def __post_init__(self):
        self.z = np.ascontiguousarray(self.z, dtype=float).reshape(-1, 4)
        if self.log_jacobian is None:
            self.log_jacobian = np.zeros(len(self.z))
        self.log_jacobian = np.ascontiguousarray(self.log_jacobian, dtype=float)
        if self.log_jacobian.shape != (len(self.z),):
            raise ValueError("log_jacobian must hold one entry per particle")
        if not self.weight > 0:
            raise ValueError("particle weight must be positive")

    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def x(self) -> np.ndarray:
        return self.z[:, :2]

    @property
    def v(self) -> np.ndarray:
        return self.z[:, 2:]

    @property
    def mass(self) -> float:
        return self.weight * self.n

    def point(self, i: int) -> PhasePoint:
        return PhasePoint(self.z[i, :2].copy(), self.z[i, 2:].copy())

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.z.copy(), self.weight, self.log_jacobian.copy(), self.time,
                                None if self.initial is None else self.initial.copy())

    def permuted(self, perm) -> "ParticleEnsemble":
        perm = np.asarray(perm)
        return ParticleEnsemble(self.z[perm], self.weight, self.log_jacobian[perm], self.time,
                                None if self.initial is None else self.initial[perm])


def sample_initial(density: InitialDensity, n: int, seed: int,
                   retain_initial: bool = True) -> ParticleEnsemble:
    """Draw ``n`` particles i.i.d. from f0/M0, each of weight M0/n."""
    if int(n) < 1:
        raise ValueError("n must be a positive integer")
    z = density.sample(int(n), seed)
    return ParticleEnsemble(z, density.mass / n, time=0.0,
                            initial=z.copy() if retain_initial else None)


# ---------------------------------------------------------------------------
# right-hand side
# ---------------------------------------------------------------------------

def _rank(z, canonical_order: str):
    if canonical_order == "index":
        return None
    if canonical_order == "state":
        # label-free order: lexicographic in (x1, x2, v1, v2)
        by_state = np.lexsort(z.T[::-1])
        rank = np.empty(len(z), np.int64)
        rank[by_state] = np.arange(len(z))
        return rank
    raise ValueError(f"unknown canonical order {canonical_order!r}")


def build_grid(z, cf: CutoffForce, canonical_order: str = "index") -> NeighborGrid:
    z = np.asarray(z, dtype=float)
    return NeighborGrid.build(z[:, :2], cf.model.bump_x.outer_radius, _rank(z, canonical_order))


def field(z, weight, cf: CutoffForce, md: MollifiedDrive, grid: NeighborGrid | None = None,
          canonical_order: str = "index") -> np.ndarray:
    """Velocity-space field at every particle: columns (a1, a2, div_v).

    ``a = weight * sum_j F^N(x_i - x_j, v_i - v_j) + G^N(x_i, v_i)`` and
    ``div_v = weight * sum_j tr grad_v F^N(...) - 2``. The sum runs over
    same-or-adjacent grid cells only; j = i is skipped (its term is an exact
    zero, so skipping it changes no bits).
    """
    z = np.ascontiguousarray(z, dtype=float)
    interact = cf.model.interacting
    if interact:
        if grid is None:
            grid = build_grid(z, cf, canonical_order)
        elif not grid.is_current(z[:, :2]):
            raise StaleGridError("neighbour grid is stale; rebuild it for the current positions")
        g = (grid.members, grid.cell_of, grid.rows)
    else:
        n = len(z)
        g = (np.arange(n, dtype=np.int64), np.zeros(n, np.int64), np.zeros((1, 6), np.int64))
    return _field_grid(z, float(weight), cf.params, interact, md.params, *md.rule, *g)


def all_pairs_field(z, weight, cf: CutoffForce, md: MollifiedDrive,
                    canonical_order: str = "index") -> np.ndarray:
    """Reference O(N^2) version of :func:`field`.

    Every j is visited, in the grid's summation order; pairs outside the
    3x3 block add exact zeros, so the result matches :func:`field` bitwise.
    """
    z = np.ascontiguousarray(z, dtype=float)
    order = build_grid(z, cf, canonical_order).members
    return _field_all_pairs(z, float(weight), cf.params, cf.model.interacting,
                            md.params, *md.rule, order)


def mean_field_rhs(ensemble: ParticleEnsemble, cf: CutoffForce, md: MollifiedDrive, i: int,
                   grid: NeighborGrid | None = None):
    """Phase velocity ``(dx/dt, dv/dt)`` of particle ``i``.

    Raises :class:`StaleGridError` if ``grid`` was built for other positions.
    """
    if grid is not None and not grid.is_current(ensemble.x):
        raise StaleGridError("neighbour grid is stale; rebuild it for the current positions")
    f = field(ensemble.z, ensemble.weight, cf, md, grid)
    return ensemble.z[i, 2:].copy(), f[i, :2].copy()


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

def _derivative(z, weight, cf, md, canonical_order):
    f = field(z, weight, cf, md, canonical_order=canonical_order)
    dz = np.empty_like(z)
    dz[:, :2] = z[:, 2:]
    dz[:, 2:] = f[:, :2]
    return dz, f[:, 2]


def step(ensemble: ParticleEnsemble, cf: CutoffForce, md: MollifiedDrive, dt: float,
         canonical_order: str = "index") -> ParticleEnsemble:
    """One classical RK4 step of the coupled system, log-Jacobian included.

    Every stage re-evaluates all pair forces at that stage's state.
    Returns a new ensemble; the input is not modified.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    z0, w = ensemble.z, ensemble.weight
    k1, d1 = _derivative(z0, w, cf, md, canonical_order)
    k2, d2 = _derivative(z0 + 0.5 * dt * k1, w, cf, md, canonical_order)
    k3, d3 = _derivative(z0 + 0.5 * dt * k2, w, cf, md, canonical_order)
    k4, d4 = _derivative(z0 + dt * k3, w, cf, md, canonical_order)
    z = z0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError(f"non-finite state after step at t={ensemble.time}")
    L = ensemble.log_jacobian + (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
    return ParticleEnsemble(z, w, L, ensemble.time + dt, ensemble.initial)


def step_count(t0: float, t_final: float, dt: float) -> int:
    """Number of steps of nominal size ``dt`` to reach ``t_final``; the last may be short."""
    span = t_final - t0
    if span <= 0:
        return 0
    q = span / dt
    n = round(q)
    if n >= 1 and abs(q - n) <= 1e-9 * max(1.0, q):
        return int(n)
    return max(1, math.ceil(q))


def advance(ensemble: ParticleEnsemble, cf: CutoffForce, md: MollifiedDrive, t_final: float,
            dt: float, observers: Sequence[Callable] = (), stride: int = 10,
            include_initial: bool = True, recorder: Callable | None = None,
            canonical_order: str = "index"):
    """Integrate to ``t_final``, recording every ``stride`` steps.

    Step k ends at ``t0 + (k+1) dt`` (computed, not accumulated) and the last
    step is shortened to land exactly on ``t_final``. Records are taken at
    the start (if ``include_initial``), after every ``stride``-th step, and at
    the end. Each observer is called as ``obs(ensemble, record)``.

    Returns ``(final_ensemble, records)``.
    """
    from .diagnostics import record as default_recorder

    if t_final < ensemble.time:
        raise ValueError(f"t_final={t_final} lies before the ensemble time {ensemble.time}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if int(stride) < 1:
        raise ValueError("record stride must be a positive integer")
    recorder = recorder or default_recorder
    t0 = ensemble.time
    n_steps = step_count(t0, t_final, dt)
    records = []
    if n_steps == 0:
        return ensemble, records
    if cf.model.interacting and dt > cf.dt_max:
        log.warning("dt=%g exceeds the recommended bound %.3g for the cut-off force", dt, cf.dt_max)

    def emit(ens):
        rec = recorder(ens)
        records.append(rec)
        for obs in observers:
            obs(ens, rec)

    # when the span is a whole number of steps the last one keeps the nominal
    # dt, so a run split at step boundaries reproduces the unsplit one bitwise
    q = (t_final - t0) / dt
    last_dt = dt if abs(q - n_steps) <= 1e-9 * max(1.0, q) else None
    ens = ensemble
    if include_initial:
        emit(ens)
    for k in range(n_steps):
        final = k == n_steps - 1
        t_next = t_final if final else t0 + (k + 1) * dt
        h = (last_dt or t_next - ens.time) if final else dt
        ens = step(ens, cf, md, h, canonical_order)
        ens.time = t_next
        if (k + 1) % stride == 0 or k == n_steps - 1:
            emit(ens)
    return ens, records


# ---------------------------------------------------------------------------
# stability of the flow in W1
# ---------------------------------------------------------------------------

def dobrushin_rate(cf: CutoffForce, md: MollifiedDrive, mass: float) -> float:
    """Lipschitz constant L_K of the mean-field vector field in both arguments.

    ``2`` from dx/dt = v and the -v damping, ``mass * (sup q^N +
    grad_v_bound)`` from the interaction, plus the drive's x-Lipschitz bound.
    """
    m = cf.model
    return 2.0 + mass * (cf.sup_lipschitz + m.grad_v_bound) + md.lipschitz_g


@dataclass(frozen=True)
class StabilityReport:
    w1_initial: float
    w1_final: float
    bound: float
    rate: float
    t_final: float

    @property
    def passed(self) -> bool:
        return self.w1_final <= self.bound

    @property
    def log_bound(self) -> float:
        """log of the certificate; finite even when ``bound`` overflows."""
        if self.w1_initial == 0:
            return -math.inf
        return 2.0 * self.rate * self.t_final + math.log(self.w1_initial)

    def to_dict(self) -> dict:
        return {"w1_initial": self.w1_initial, "w1_final": self.w1_final, "bound": self.bound,
                "log_bound": self.log_bound, "L_K": self.rate, "t_final": self.t_final,
                "passed": self.passed}


def dobrushin_pair_run(density_a: InitialDensity, density_b: InitialDensity, n: int, seed: int,
                       cf: CutoffForce, md: MollifiedDrive, t_final: float, dt: float,
                       canonical_order: str = "index") -> StabilityReport:
    """Run two ensembles drawn with the same seed and compare them in W1.

    The certificate is ``exp(2 L_K t) * W1(0)``.
    """
    from .transport import w1_exact

    a = sample_initial(density_a, n, seed)
    b = sample_initial(density_b, n, seed)
    w0, _ = w1_exact(a.z, b.z)
    a_t, _ = advance(a, cf, md, t_final, dt, stride=10**9, include_initial=False,
                     canonical_order=canonical_order)
    b_t, _ = advance(b, cf, md, t_final, dt, stride=10**9, include_initial=False,
                     canonical_order=canonical_order)
    wt, _ = w1_exact(a_t.z, b_t.z)
    rate = dobrushin_rate(cf, md, density_a.mass)
    if w0 == 0:
        bound = 0.0  # identical ensembles stay identical
    else:
        with np.errstate(over="ignore"):
            bound = float(np.exp(2.0 * rate * t_final) * w0)
    return StabilityReport(float(w0), float(wt), bound, rate, float(t_final))
