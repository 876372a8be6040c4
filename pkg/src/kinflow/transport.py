"""Exact Wasserstein-1 distance between equal-size uniform empirical measures.

For two n-point measures with weights 1/n the optimal plan is a permutation,
so W1 is a linear assignment problem under the Euclidean cost. The
assignment is solved with scipy, then canonicalised: among all optimal
permutations the lexicographically smallest is returned, which makes the plan
reproducible when the cost has ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

MAX_SUPPORT = 1024


class SizeLimitError(ValueError):
    """Support larger than the exact solver accepts."""


@dataclass(frozen=True)
class DiscreteMeasure:
    """Uniform measure ``(1/n) sum_i delta_{support[i]}``."""

    support: np.ndarray

    def __post_init__(self):
        s = np.array(self.support, dtype=float)
        if s.ndim == 1:
            s = s.reshape(1, -1)
        if s.ndim != 2 or len(s) < 1:
            raise ValueError("a discrete measure needs at least one support point")
        if not np.all(np.isfinite(s)):
            raise ValueError("support points must be finite")
        object.__setattr__(self, "support", s)

    @property
    def n(self) -> int:
        return len(self.support)


@dataclass(frozen=True)
class CouplingPlan:
    """Monge plan: ``a[i]`` is sent to ``b[permutation[i]]``."""

    permutation: np.ndarray
    cost: float


def _support(m) -> np.ndarray:
    return m.support if isinstance(m, DiscreteMeasure) else DiscreteMeasure(m).support


def assignment_cost(cost: np.ndarray, perm) -> float:
    """Average cost ``sum_i cost[i, perm[i]] / n``, summed in row order."""
    n = len(perm)
    return float(math.fsum(cost[np.arange(n), np.asarray(perm)]) / n)


def _potentials(cost, perm):
    """Dual potentials (u, v) certifying optimality of ``perm``.

    Row potentials are shortest-path distances in the graph with an edge
    ``k -> i`` of length ``cost[i, perm[k]] - cost[k, perm[k]]``; optimality
    of ``perm`` rules out negative cycles.
    """
    n = len(perm)
    w = cost[:, perm].T - cost[np.arange(n), perm][:, None]  # w[k, i]
    u = np.zeros(n)
    for _ in range(n + 1):
        nu = np.minimum(u, (u[:, None] + w).min(axis=0))
        if np.array_equal(nu, u):
            break
        u = nu
    v = np.empty(n)
    v[perm] = cost[np.arange(n), perm] - u
    return u, v


def _lexicographic_min(tight: list, perm: np.ndarray) -> np.ndarray:
    """Smallest perfect matching (row order) in the bipartite graph ``tight``.

    ``perm`` must be a perfect matching of the graph. Row by row, the
    smallest column that still admits a completion by the rows below is
    fixed, using alternating paths over the unfixed rows.
    """
    n = len(perm)
    perm = perm.copy()
    owner = np.empty(n, dtype=np.int64)
    owner[perm] = np.arange(n)
    for i in range(n):
        for j in tight[i]:
            if j >= perm[i]:
                break
            # j is held by a lower row k > i; look for an alternating path
            # from k to the column perm[i] that row i would give up.
            target = perm[i]
            k0 = owner[j]
            if k0 < i:
                continue
            parent = {k0: None}
            queue = [k0]
            found = None
            while queue and found is None:
                nxt = []
                for k in queue:
                    for c in tight[k]:
                        if c == perm[k]:
                            continue
                        if c == target:
                            found = (k, c)
                            break
                        r = owner[c]
                        if r > i and r not in parent:
                            parent[r] = (k, c)
                            nxt.append(r)
                    if found is not None:
                        break
                queue = nxt
            if found is None:
                continue
            k, c = found
            while True:
                prev = parent[k]
                perm[k] = c
                owner[c] = k
                if prev is None:
                    break
                k, c = prev
            perm[i] = j
            owner[j] = i
            break
    return perm


def w1_exact(a, b) -> tuple[float, CouplingPlan]:
    """W1 between two equal-size uniform measures and its canonical plan.

    Parameters
    ----------
    a, b : DiscreteMeasure or array_like of shape (n, d)

    Returns
    -------
    cost : float
        ``sum_i |a_i - b_{pi(i)}| / n`` at the optimal permutation.
    plan : CouplingPlan
        Lexicographically smallest optimal permutation.
    """
    A, B = _support(a), _support(b)
    if len(A) != len(B):
        raise ValueError(f"W1 solver needs equal support sizes, got {len(A)} and {len(B)}")
    n = len(A)
    if n > MAX_SUPPORT:
        raise SizeLimitError(f"support size {n} exceeds the exact-solver limit {MAX_SUPPORT}")
    if A.shape[1] != B.shape[1]:
        raise ValueError("measures live in different dimensions")
    cost = cdist(A, B)
    _, perm = linear_sum_assignment(cost)
    perm = perm.astype(np.int64)
    best = assignment_cost(cost, perm)
    if n > 1:
        u, v = _potentials(cost, perm)
        scale = max(float(cost.max()), 1e-300)
        tol = 8.0 * np.finfo(float).eps * n * scale
        reduced = cost - u[:, None] - v[None, :]
        tight = [np.flatnonzero(row <= tol).tolist() for row in reduced]
        for i in range(n):
            if perm[i] not in tight[i]:
                tight[i] = sorted(tight[i] + [int(perm[i])])
        canon = _lexicographic_min(tight, perm)
        c = assignment_cost(cost, canon)
        if c <= best:
            perm, best = canon, c
    return best, CouplingPlan(perm, best)


# ---------------------------------------------------------------------------
# refinement study
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceTable:
    sizes: list
    seeds: list
    t_final: float
    rows: list = field(default_factory=list)  # (n_low, n_high, seed, t, w1)

    def medians(self, t: float) -> list[float]:
        out = []
        for lo, hi in zip(self.sizes[:-1], self.sizes[1:]):
            vals = [r[4] for r in self.rows if r[0] == lo and r[1] == hi and r[3] == t]
            out.append(float(np.median(vals)) if vals else math.nan)
        return out

    def trend(self, t: float | None = None) -> tuple[int, int]:
        """(non-increasing comparisons, total) over the refinement medians.

        With medians d_1..d_m the comparisons are every pair d_k >= d_l with
        k < l; for four sizes these are d1>=d2, d2>=d3 and d1>=d3.
        """
        d = self.medians(self.t_final if t is None else t)
        pairs = [(k, l) for k in range(len(d)) for l in range(k + 1, len(d))]
        return sum(d[l] <= d[k] for k, l in pairs), len(pairs)

    def summary(self) -> dict:
        return {"sizes": list(self.sizes), "seeds": list(self.seeds), "t_final": self.t_final,
                "median_w1_t0": self.medians(0.0), "median_w1_final": self.medians(self.t_final),
                "trend": list(self.trend())}


def subsampled_w1(low: np.ndarray, high: np.ndarray, draws: int, rng) -> float:
    """Median W1 between ``low`` and size-matched random subsets of ``high``."""
    if len(high) == len(low):
        return w1_exact(low, high)[0]
    vals = [w1_exact(low, high[rng.choice(len(high), len(low), replace=False)])[0]
            for _ in range(draws)]
    return float(np.median(vals))


def convergence_study(density, sizes: Sequence[int], seeds: Sequence[int],
                      force_for: Callable, drive_for: Callable, t_final: float, dt: float,
                      subsamples: int = 16, progress: Callable | None = None) -> ConvergenceTable:
    """Refinement distances W1(f^{n_k}, f^{n_{k+1}}) at t = 0 and ``t_final``.

    ``force_for(n)`` and ``drive_for(n)`` return the cut-off force and the
    mollified drive for an ensemble of size ``n``. The ensemble of size n
    for seed s is sampled from the entropy ``[s, n]``, so different sizes
    are independent draws.
    """
    from .flow import advance, sample_initial

    sizes = [int(s) for s in sizes]
    if sorted(sizes) != sizes or len(sizes) < 2:
        raise ValueError("sizes must be increasing and at least two long")
    if sizes[-2] > MAX_SUPPORT:
        raise SizeLimitError("refinement sizes exceed the exact-solver limit")
    table = ConvergenceTable(sizes, list(seeds), float(t_final))
    for seed in seeds:
        start, end = {}, {}
        for n in sizes:
            ens = sample_initial(density, n, [int(seed), n], retain_initial=False)
            start[n] = ens.z
            fin, _ = advance(ens, force_for(n), drive_for(n), t_final, dt, stride=10**9,
                             include_initial=False)
            end[n] = fin.z
        for lo, hi in zip(sizes[:-1], sizes[1:]):
            for t, snap in ((0.0, start), (float(t_final), end)):
                rng = np.random.default_rng([int(seed), lo, hi])
                w = subsampled_w1(snap[lo], snap[hi], subsamples, rng)
                table.rows.append((lo, hi, int(seed), t, w))
        if progress:
            progress(seed)
    return table
