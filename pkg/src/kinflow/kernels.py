"""Interaction force, its cut-off regularisation, and the mollified drive.

The force on a particle from a neighbour at relative position ``x`` and
relative velocity ``v`` is radial,

    F(x, v) = dV/dr(|x|, v) * x/|x| * H_x(|x|) * H_v(|v|),

with smooth finite-range bumps ``H_x`` (support radius 2R) and ``H_v``
(support radius 2R~). Two radial profiles are available:

* ``spring``: dV/dr = -k_n (2R - r) * (1 + gamma_n tanh(gamma_t |v|))
* ``morse``:  dV/dr = -2 k_n R (u^2 - u) * (1 + gamma_n tanh(gamma_t |v|)),
  with u = exp(-(r - R)/R)

The cut-off force replaces ``x/|x|`` by ``N**theta * x`` inside the radius
``N**-theta``, which keeps it bounded and Lipschitz at the origin.

All bounds exposed here (``f_inf_bound``, ``grad_v_bound``,
``lipschitz_constant``) are analytic upper bounds, never sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from numba import njit

SPRING = 0
MORSE = 1
PROFILES = {"spring": SPRING, "morse": MORSE}

DRIVE_CONSTANT = 0
DRIVE_WELL = 1
DRIVE_LANE = 2
DRIVES = {"constant": DRIVE_CONSTANT, "gaussian-well": DRIVE_WELL, "lane": DRIVE_LANE}

# sup |d/dt (6t^5 - 15t^4 + 10t^3)| on [0, 1], attained at t = 1/2
SMOOTHSTEP_SLOPE = 1.875

_E = math.e


class SingularInputError(ValueError):
    """The uncut force was evaluated at zero separation."""


# ---------------------------------------------------------------------------
# compiled scalar kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _bump(s, inner, outer):
    if s <= inner:
        return 1.0
    if s >= outer:
        return 0.0
    t = (s - inner) / (outer - inner)
    return 1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0)


@njit(cache=True)
def _dbump(s, inner, outer):
    if s <= inner or s >= outer:
        return 0.0
    w = outer - inner
    t = (s - inner) / w
    return -30.0 * t * t * (1.0 - t) * (1.0 - t) / w


@njit(cache=True)
def _radial(r, kind, k_n, r_in, r_out):
    # bare dV/dr on [0, r_out); velocity factor and bumps applied by caller
    if kind == SPRING:
        return -k_n * (r_out - r)
    u = math.exp(-(r - r_in) / r_in)
    return -2.0 * k_n * r_in * (u * u - u)


@njit(cache=True)
def _norm(a, b, sq):
    # sq = a*a + b*b underflows for tiny (a, b); hypot does not
    return math.sqrt(sq) if sq > 1e-280 else math.hypot(a, b)


@njit(cache=True)
def pair_force(dx, dy, du, dw, fp):
    """Cut-off force and trace of its velocity gradient for one pair.

    ``fp`` is the packed parameter vector built by ``CutoffForce.params``.
    A cut radius of 0 gives the uncut force (undefined at dx = dy = 0).
    """
    r_out = fp[5]
    rt_out = fp[7]
    r2 = dx * dx + dy * dy
    if r2 >= r_out * r_out:
        return 0.0, 0.0, 0.0
    s2 = du * du + dw * dw
    if s2 >= rt_out * rt_out:
        return 0.0, 0.0, 0.0
    r = _norm(dx, dy, r2)
    s = _norm(du, dw, s2)
    gamma_n = fp[2]
    gamma_t = fp[3]
    radial = _radial(r, int(fp[0]), fp[1], fp[4], r_out) * _bump(r, fp[4], r_out)
    th = math.tanh(gamma_t * s)
    vel = 1.0 + gamma_n * th
    hv = _bump(s, fp[6], rt_out)
    if r >= fp[9]:
        ex = dx / r
        ey = dy / r
    else:
        ex = fp[8] * dx
        ey = fp[8] * dy
    p = radial * vel * hv
    tr = 0.0
    if s > 0.0:
        dphi = gamma_n * gamma_t * (1.0 - th * th) * hv + vel * _dbump(s, fp[6], rt_out)
        tr = radial * dphi * (ex * du + ey * dw) / s
    return p * ex, p * ey, tr


@njit(cache=True)
def _pair_grad_v(dx, dy, du, dw, fp, out):
    out[:, :] = 0.0
    r_out = fp[5]
    rt_out = fp[7]
    r2 = dx * dx + dy * dy
    s2 = du * du + dw * dw
    if r2 >= r_out * r_out or s2 >= rt_out * rt_out or s2 == 0.0:
        return
    r = _norm(dx, dy, r2)
    s = _norm(du, dw, s2)
    gamma_n = fp[2]
    gamma_t = fp[3]
    radial = _radial(r, int(fp[0]), fp[1], fp[4], r_out) * _bump(r, fp[4], r_out)
    th = math.tanh(gamma_t * s)
    vel = 1.0 + gamma_n * th
    hv = _bump(s, fp[6], rt_out)
    if r >= fp[9]:
        ex = dx / r
        ey = dy / r
    else:
        ex = fp[8] * dx
        ey = fp[8] * dy
    dphi = gamma_n * gamma_t * (1.0 - th * th) * hv + vel * _dbump(s, fp[6], rt_out)
    c = radial * dphi / s
    out[0, 0] = c * ex * du
    out[0, 1] = c * ex * dw
    out[1, 0] = c * ey * du
    out[1, 1] = c * ey * dw


@njit(cache=True)
def _force_many(x, v, fp):
    n = x.shape[0]
    out = np.empty((n, 2))
    for i in range(n):
        fx, fy, _ = pair_force(x[i, 0], x[i, 1], v[i, 0], v[i, 1], fp)
        out[i, 0] = fx
        out[i, 1] = fy
    return out


@njit(cache=True)
def _grad_v_many(x, v, fp):
    n = x.shape[0]
    out = np.empty((n, 2, 2))
    buf = np.empty((2, 2))
    for i in range(n):
        _pair_grad_v(x[i, 0], x[i, 1], v[i, 0], v[i, 1], fp, buf)
        out[i] = buf
    return out


@njit(cache=True)
def raw_drive(x, y, dp):
    """The unsmoothed drive field g at (x, y)."""
    kind = int(dp[0])
    gx = dp[1]
    gy = dp[2]
    if kind == DRIVE_WELL:
        a = dp[3]
        w = dp[6]
        rx = x - dp[4]
        ry = y - dp[5]
        e = math.exp(-(rx * rx + ry * ry) / (2.0 * w * w))
        gx -= a * rx / w * e
        gy -= a * ry / w * e
    elif kind == DRIVE_LANE:
        gy -= dp[3] * math.tanh((y - dp[5]) / dp[6])
    return gx, gy


@njit(cache=True)
def smoothed_drive(x, y, dp, qx, qy, qw):
    """(j_eps * g)(x, y) by the precomputed disc rule; exact for constant g."""
    if int(dp[0]) == DRIVE_CONSTANT:
        return dp[1], dp[2]
    eps = dp[7]
    sx = 0.0
    sy = 0.0
    for k in range(qw.shape[0]):
        gx, gy = raw_drive(x - eps * qx[k], y - eps * qy[k], dp)
        sx += qw[k] * gx
        sy += qw[k] * gy
    return sx, sy


@njit(cache=True)
def _smoothed_many(x, dp, qx, qy, qw):
    n = x.shape[0]
    out = np.empty((n, 2))
    for i in range(n):
        gx, gy = smoothed_drive(x[i, 0], x[i, 1], dp, qx, qy, qw)
        out[i, 0] = gx
        out[i, 1] = gy
    return out


@njit(cache=True)
def _raw_many(x, dp):
    n = x.shape[0]
    out = np.empty((n, 2))
    for i in range(n):
        gx, gy = raw_drive(x[i, 0], x[i, 1], dp)
        out[i, 0] = gx
        out[i, 1] = gy
    return out


@njit(cache=True)
def _trace_sum(px, pv, x, v, fp):
    # trace of grad_v F^N(x - x_j, v - v_j), summed over j in index order
    acc = 0.0
    for j in range(x.shape[0]):
        _, _, tr = pair_force(px[0] - x[j, 0], px[1] - x[j, 1],
                              pv[0] - v[j, 0], pv[1] - v[j, 1], fp)
        acc += tr
    return acc


# ---------------------------------------------------------------------------
# model objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BumpProfile:
    """Quintic-smoothstep cut-off: 1 below ``inner_radius``, 0 above ``outer_radius``."""

    inner_radius: float
    outer_radius: float
    transition: str = "quintic-smoothstep"

    def __post_init__(self):
        if not 0.0 < self.inner_radius < self.outer_radius:
            raise ValueError(
                f"bump needs 0 < inner < outer, got {self.inner_radius}, {self.outer_radius}")

    @property
    def max_slope(self) -> float:
        return SMOOTHSTEP_SLOPE / (self.outer_radius - self.inner_radius)


def eval_bump(profile: BumpProfile, s):
    """Evaluate the bump at nonnegative ``s`` (scalar or array)."""
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("bump argument must be a nonnegative radius")
    flat = np.array([_bump(float(a), profile.inner_radius, profile.outer_radius)
                     for a in arr.ravel()])
    return float(flat[0]) if arr.ndim == 0 else flat.reshape(arr.shape)


@dataclass(frozen=True)
class ForceModel:
    """Physical parameters of the finite-range interaction force."""

    k_n: float = 1.0
    gamma_n: float = 0.5
    gamma_t: float = 1.0
    R: float = 0.25
    R_tilde: float = 0.5
    profile_kind: str = "spring"
    bump_x: BumpProfile = field(default=None, compare=False)
    bump_v: BumpProfile = field(default=None, compare=False)

    def __post_init__(self):
        if self.profile_kind not in PROFILES:
            raise ValueError(f"unknown profile {self.profile_kind!r}; expected one of {sorted(PROFILES)}")
        for name in ("k_n", "gamma_n", "gamma_t"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("R", "R_tilde"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.bump_x is None:
            object.__setattr__(self, "bump_x", BumpProfile(self.R, 2.0 * self.R))
        if self.bump_v is None:
            object.__setattr__(self, "bump_v", BumpProfile(self.R_tilde, 2.0 * self.R_tilde))

    @property
    def interacting(self) -> bool:
        return self.k_n > 0.0

    @property
    def radial_bounds(self) -> tuple[float, float]:
        """sup |dV/dr| and sup |d2V/dr2| of the bare profile on [0, 2R)."""
        r_in, r_out = self.bump_x.inner_radius, self.bump_x.outer_radius
        if self.profile_kind == "spring":
            return self.k_n * r_out, self.k_n
        # u = exp(-(r - R)/R) ranges over (exp(-(r_out - R)/R), e]
        u_lo = math.exp(-(r_out - r_in) / r_in)
        u_hi = _E
        h1 = max(abs(u * u - u) for u in (u_lo, u_hi, min(max(0.5, u_lo), u_hi)))
        h2 = max(abs(2 * u * u - u) for u in (u_lo, u_hi, min(max(0.25, u_lo), u_hi)))
        return 2.0 * self.k_n * r_in * h1, 2.0 * self.k_n * h2

    @property
    def velocity_factor_max(self) -> float:
        """sup of (1 + gamma_n tanh(gamma_t s)) over the velocity support."""
        return 1.0 + self.gamma_n * math.tanh(self.gamma_t * self.bump_v.outer_radius)

    @property
    def f_inf_bound(self) -> float:
        """Upper bound on |F| (and on |F^N| for every N)."""
        return self.radial_bounds[0] * self.velocity_factor_max

    @property
    def grad_v_bound(self) -> float:
        """Upper bound on the operator norm of grad_v F^N, uniform in N."""
        dphi = self.gamma_n * self.gamma_t + self.velocity_factor_max * self.bump_v.max_slope
        return self.radial_bounds[0] * dphi

    @property
    def radial_slope_bound(self) -> float:
        """Upper bound on |d/dr (dV/dr * H_x * velocity factor * H_v)|."""
        d1, d2 = self.radial_bounds
        return (d2 + d1 * self.bump_x.max_slope) * self.velocity_factor_max

    @property
    def lipschitz_constant(self) -> float:
        """The constant C in q^N = C/|x| + C (outer) and C N^theta (inner)."""
        return 2.0 * max(self.f_inf_bound, self.radial_slope_bound)

    def to_dict(self) -> dict:
        return {"profile_kind": self.profile_kind, "k_n": self.k_n, "gamma_n": self.gamma_n,
                "gamma_t": self.gamma_t, "R": self.R, "R_tilde": self.R_tilde}

    @classmethod
    def from_dict(cls, d: dict) -> "ForceModel":
        return cls(**{k: d[k] for k in ("k_n", "gamma_n", "gamma_t", "R", "R_tilde", "profile_kind") if k in d})


@dataclass(frozen=True)
class CutoffForce:
    """F^N: the force with its direction regularised inside radius N**-theta."""

    model: ForceModel
    n_particles: int
    theta: float = 0.25

    def __post_init__(self):
        if int(self.n_particles) < 1:
            raise ValueError("n_particles must be a positive integer")
        if not self.theta > 0.0:
            raise ValueError("theta must be positive")

    @property
    def n_theta(self) -> float:
        return float(self.n_particles) ** self.theta

    @property
    def r_cut(self) -> float:
        return float(self.n_particles) ** (-self.theta)

    @property
    def sup_lipschitz(self) -> float:
        """sup_x q^N(x), attained as |x| -> N**-theta from above."""
        c = self.model.lipschitz_constant
        return c * self.n_theta + c

    @property
    def dt_max(self) -> float:
        """Recommended step bound 0.1 / (1 + q^N at the cut radius)."""
        return 0.1 / (1.0 + self.sup_lipschitz)

    @cached_property
    def params(self) -> np.ndarray:
        m = self.model
        return np.array([
            PROFILES[m.profile_kind], m.k_n, m.gamma_n, m.gamma_t,
            m.bump_x.inner_radius, m.bump_x.outer_radius,
            m.bump_v.inner_radius, m.bump_v.outer_radius,
            self.n_theta, self.r_cut,
        ])


def _as_rows(a):
    arr = np.ascontiguousarray(a, dtype=float)
    single = arr.ndim == 1
    return arr.reshape(-1, 2), single


def eval_force(model: ForceModel, x, v):
    """Uncut force F(x, v); ``x`` must be nonzero.

    Accepts single 2-vectors or ``(n, 2)`` arrays.
    """
    xs, single = _as_rows(x)
    vs, _ = _as_rows(v)
    if np.any(np.all(xs == 0.0, axis=1)):
        raise SingularInputError("uncut force is undefined at x = 0; use the cut-off force")
    fp = CutoffForce(model, 1).params.copy()
    fp[8], fp[9] = 1.0, 0.0
    out = _force_many(xs, np.broadcast_to(vs, xs.shape).copy(), fp)
    return out[0] if single else out


def eval_cutoff_force(cf: CutoffForce, x, v):
    """F^N(x, v); defined everywhere, zero at x = 0."""
    xs, single = _as_rows(x)
    vs, _ = _as_rows(v)
    out = _force_many(xs, np.broadcast_to(vs, xs.shape).copy(), cf.params)
    return out[0] if single else out


def grad_v_cutoff_force(cf: CutoffForce, x, v):
    """Velocity Jacobian dF^N_i/dv_j, shape ``(2, 2)`` or ``(n, 2, 2)``.

    At v = 0 the tanh(|v|) factor has a kink; the symmetric value 0 is used.
    """
    xs, single = _as_rows(x)
    vs, _ = _as_rows(v)
    out = _grad_v_many(xs, np.broadcast_to(vs, xs.shape).copy(), cf.params)
    return out[0] if single else out


def lipschitz_estimate(cf: CutoffForce, x, v=None):
    """q^N(x, v): dominates the local x-Lipschitz constant of F^N.

    Zero outside the support ``|x| >= 2R`` (or ``|v| >= 2R~`` when ``v`` is given).
    """
    xs, single = _as_rows(x)
    r = np.linalg.norm(xs, axis=1)
    c = cf.model.lipschitz_constant
    with np.errstate(divide="ignore"):
        q = np.where(r >= cf.r_cut, c / np.where(r > 0, r, 1.0) + c, c * cf.n_theta)
    q = np.where(r >= cf.model.bump_x.outer_radius, 0.0, q)
    if v is not None:
        vs, _ = _as_rows(v)
        s = np.linalg.norm(np.broadcast_to(vs, xs.shape), axis=1)
        q = np.where(s >= cf.model.bump_v.outer_radius, 0.0, q)
    return float(q[0]) if single else q


# ---------------------------------------------------------------------------
# mollified drive
# ---------------------------------------------------------------------------

def _bump_profile(r):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(r < 1.0, np.exp(-1.0 / (1.0 - np.minimum(r, 1.0) ** 2)), 0.0)


@lru_cache(maxsize=None)
def _polar_rule(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    r = 0.5 * (x + 1.0)
    wr = 0.5 * w
    phi = np.pi * (x + 1.0)
    wphi = np.pi * w
    rr, pp = np.meshgrid(r, phi, indexing="ij")
    ww = np.outer(wr * r, wphi)
    return rr.ravel(), pp.ravel(), ww.ravel()


@lru_cache(maxsize=None)
def mollifier_normalization() -> float:
    """The constant c with int_{|y|<1} c exp(-1/(1 - |y|^2)) dy = 1.

    The integrand is radial, so c = 1 / (2 pi int_0^1 r exp(-1/(1-r^2)) dr);
    a 256-point Gauss-Legendre rule resolves it to rounding level.
    """
    x, w = np.polynomial.legendre.leggauss(256)
    r = 0.5 * (x + 1.0)
    return 1.0 / (2.0 * np.pi * float(np.sum(0.5 * w * r * _bump_profile(r))))


def mollifier(y, scale: float = 1.0):
    """Standard mollifier j_scale(y) = scale^-2 c exp(-1/(1 - |y/scale|^2))."""
    y = np.asarray(y, dtype=float)
    r = np.linalg.norm(y, axis=-1) / scale
    return mollifier_normalization() * _bump_profile(r) / scale**2


@lru_cache(maxsize=None)
def disc_rule(order: int = 24):
    """Nodes ``(ux, uy)`` in the unit disc and weights for convolution with j.

    Tensor Gauss-Legendre in (r, phi) with ``order`` points per axis. The
    weights are rescaled to sum to one, so the rule is exact on constants
    and ``sup |j * g| <= sup |g|`` holds for the discrete convolution too.
    """
    rr, pp, ww = _polar_rule(order)
    w = ww * _bump_profile(rr) * mollifier_normalization()
    keep = w > 0
    w = w[keep] / math.fsum(w[keep])
    return (np.ascontiguousarray((rr * np.cos(pp))[keep]),
            np.ascontiguousarray((rr * np.sin(pp))[keep]),
            np.ascontiguousarray(w))


@dataclass(frozen=True)
class MollifiedDrive:
    """Desired-velocity drive G^N(x, v) = (j_{1/N} * g)(x) - v.

    ``g(x) = value + term`` where the term is zero (``constant``), a
    Gaussian attracting well ``-a (x - c)/w exp(-|x - c|^2 / 2w^2)``
    (``gaussian-well``), or a transverse lane-keeping pull
    ``(0, -a tanh((x_2 - c_2)/w))`` (``lane``).
    """

    kind: str = "constant"
    value: tuple = (0.0, 0.0)
    amplitude: float = 0.0
    center: tuple = (0.0, 0.0)
    width: float = 1.0
    mollifier_scale: float = 1.0
    quadrature_order: int = 24

    def __post_init__(self):
        if self.kind not in DRIVES:
            raise ValueError(f"unknown drive {self.kind!r}; expected one of {sorted(DRIVES)}")
        object.__setattr__(self, "value", tuple(float(a) for a in self.value))
        object.__setattr__(self, "center", tuple(float(a) for a in self.center))
        if len(self.value) != 2 or len(self.center) != 2:
            raise ValueError("drive value and center must be 2-vectors")
        if not self.amplitude >= 0.0:
            raise ValueError("drive amplitude must be nonnegative")
        if not self.width > 0.0:
            raise ValueError("drive width must be positive")
        if not self.mollifier_scale > 0.0:
            raise ValueError("mollifier scale must be positive")
        if int(self.quadrature_order) < 2:
            raise ValueError("quadrature order must be at least 2")

    @classmethod
    def for_particles(cls, n_particles: int, **kw) -> "MollifiedDrive":
        return cls(mollifier_scale=1.0 / n_particles, **kw)

    @property
    def sup_g(self) -> float:
        """Analytic bound on sup |g|; also bounds sup |j * g|."""
        v0, v1 = self.value
        if self.kind == "constant":
            return math.hypot(v0, v1)
        if self.kind == "gaussian-well":
            return math.hypot(v0, v1) + self.amplitude * math.exp(-0.5)
        return math.hypot(v0, abs(v1) + self.amplitude)

    @property
    def lipschitz_g(self) -> float:
        """Analytic Lipschitz bound of g (and of j * g)."""
        if self.kind == "constant":
            return 0.0
        return self.amplitude / self.width

    @cached_property
    def params(self) -> np.ndarray:
        return np.array([DRIVES[self.kind], self.value[0], self.value[1], self.amplitude,
                         self.center[0], self.center[1], self.width, self.mollifier_scale])

    @property
    def rule(self):
        return disc_rule(int(self.quadrature_order))

    def g(self, x):
        xs, single = _as_rows(x)
        out = _raw_many(xs, self.params)
        return out[0] if single else out

    def smoothed(self, x):
        """(j_{1/N} * g)(x)."""
        xs, single = _as_rows(x)
        out = _smoothed_many(xs, self.params, *self.rule)
        return out[0] if single else out

    def translated(self, shift) -> "MollifiedDrive":
        c = (self.center[0] + shift[0], self.center[1] + shift[1])
        return MollifiedDrive(self.kind, self.value, self.amplitude, c, self.width,
                              self.mollifier_scale, self.quadrature_order)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": list(self.value), "amplitude": self.amplitude,
                "center": list(self.center), "width": self.width,
                "mollifier_scale": self.mollifier_scale, "quadrature_order": self.quadrature_order}


def eval_drive(md: MollifiedDrive, x, v):
    """G^N(x, v) = (j_{1/N} * g)(x) - v."""
    vs, single = _as_rows(v)
    return md.smoothed(x) - (vs[0] if single else vs)


def div_v_field(cf: CutoffForce, md: MollifiedDrive, ensemble, z) -> float:
    """div_v (F^N * mu^N + G^N) at the phase point ``z = (x1, x2, v1, v2)``.

    ``ensemble`` is anything with ``z`` (n, 4) and ``weight`` attributes.
    The drive contributes exactly -2 (two velocity dimensions).
    """
    z = np.asarray(z, dtype=float)
    pts = np.ascontiguousarray(ensemble.z)
    tr = _trace_sum(z[:2].copy(), z[2:].copy(), pts[:, :2].copy(), pts[:, 2:].copy(), cf.params)
    return ensemble.weight * tr - 2.0
