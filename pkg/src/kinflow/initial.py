"""Compactly supported initial phase-space densities f0(x1, x2, v1, v2).

Every density carries its total mass, so ``pdf`` integrates to ``mass``.
Moments are analytic; sampling is rejection against the analytic sup on the
support box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

KINDS = ("product-uniform-box", "truncated-gaussian", "two-bump")


def _vec4(a, name):
    arr = np.asarray(a, dtype=float)
    if arr.shape != (4,):
        raise ValueError(f"{name} must have 4 components (x1, x2, v1, v2)")
    return tuple(float(c) for c in arr)


@dataclass(frozen=True)
class InitialDensity:
    """Initial density descriptor.

    kinds
        ``product-uniform-box``: constant on the box ``[lo, hi]``.
        ``truncated-gaussian``: product of 1-d normals ``(mean, std)``
        truncated to ``[lo, hi]`` per axis.
        ``two-bump``: uniform on ``[lo, hi]`` with mass fraction
        ``fraction`` plus uniform on ``[lo2, hi2]`` with the rest.

    ``shift`` translates the whole density; shifted samples are the base
    samples plus ``shift`` exactly, which couples perturbed ensembles.
    """

    kind: str
    lo: tuple
    hi: tuple
    mass: float = 1.0
    mean: tuple | None = None
    std: tuple | None = None
    lo2: tuple | None = None
    hi2: tuple | None = None
    fraction: float = 0.5
    shift: tuple = (0.0, 0.0, 0.0, 0.0)
    _axes: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown density kind {self.kind!r}; expected one of {KINDS}")
        for name in ("lo", "hi", "shift"):
            object.__setattr__(self, name, _vec4(getattr(self, name), name))
        lo, hi = np.array(self.lo), np.array(self.hi)
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ValueError("density support must be bounded (finite lo/hi)")
        if np.any(hi <= lo):
            raise ValueError("density support needs lo < hi on every axis")
        if not self.mass > 0:
            raise ValueError("density mass must be positive")
        if self.kind == "truncated-gaussian":
            if self.mean is None or self.std is None:
                raise ValueError("truncated-gaussian needs mean and std")
            object.__setattr__(self, "mean", _vec4(self.mean, "mean"))
            object.__setattr__(self, "std", _vec4(self.std, "std"))
            if min(self.std) <= 0:
                raise ValueError("std must be positive")
            axes = tuple(
                stats.truncnorm((a - m) / s, (b - m) / s, loc=m, scale=s)
                for a, b, m, s in zip(self.lo, self.hi, self.mean, self.std))
            object.__setattr__(self, "_axes", axes)
        if self.kind == "two-bump":
            if self.lo2 is None or self.hi2 is None:
                raise ValueError("two-bump needs lo2 and hi2")
            object.__setattr__(self, "lo2", _vec4(self.lo2, "lo2"))
            object.__setattr__(self, "hi2", _vec4(self.hi2, "hi2"))
            if np.any(np.array(self.hi2) <= np.array(self.lo2)):
                raise ValueError("second bump needs lo2 < hi2 on every axis")
            if not 0.0 < self.fraction < 1.0:
                raise ValueError("two-bump fraction must lie in (0, 1)")

    # -- geometry ----------------------------------------------------------

    def _boxes(self):
        """Base (unshifted) uniform boxes as (lo, hi, mass)."""
        if self.kind == "two-bump":
            return [(np.array(self.lo), np.array(self.hi), self.mass * self.fraction),
                    (np.array(self.lo2), np.array(self.hi2), self.mass * (1 - self.fraction))]
        return [(np.array(self.lo), np.array(self.hi), self.mass)]

    @property
    def support_box(self) -> tuple[np.ndarray, np.ndarray]:
        boxes = self._boxes()
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        s = np.array(self.shift)
        return lo + s, hi + s

    def shifted(self, shift) -> "InitialDensity":
        s = np.array(self.shift) + np.asarray(shift, dtype=float)
        return InitialDensity(self.kind, self.lo, self.hi, self.mass, self.mean, self.std,
                              self.lo2, self.hi2, self.fraction, tuple(s))

    # -- pointwise ---------------------------------------------------------

    def _base_pdf(self, z):
        if self.kind == "truncated-gaussian":
            out = np.full(len(z), self.mass)
            for k, ax in enumerate(self._axes):
                out *= ax.pdf(z[:, k])
            return out
        out = np.zeros(len(z))
        for lo, hi, m in self._boxes():
            inside = np.all((z >= lo) & (z <= hi), axis=1)
            out += np.where(inside, m / np.prod(hi - lo), 0.0)
        return out

    def pdf(self, z):
        """f0(z) for points of shape ``(4,)`` or ``(n, 4)``."""
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        vals = self._base_pdf(z.reshape(-1, 4) - np.array(self.shift))
        return float(vals[0]) if single else vals

    @property
    def sup(self) -> float:
        """Analytic ||f0||_inf."""
        if self.kind == "truncated-gaussian":
            out = self.mass
            for ax, a, b, m in zip(self._axes, self.lo, self.hi, self.mean):
                out *= ax.pdf(min(max(m, a), b))
            return float(out)
        boxes = self._boxes()
        dens = [m / np.prod(hi - lo) for lo, hi, m in boxes]
        if len(boxes) == 1:
            return float(dens[0])
        (l1, h1, _), (l2, h2, _) = boxes
        overlap = np.all(np.minimum(h1, h2) > np.maximum(l1, l2))
        return float(sum(dens) if overlap else max(dens))

    # -- moments -----------------------------------------------------------

    def _axis_moments(self):
        """Per-axis (E[z_k], E[z_k^2]) of the normalised base density."""
        if self.kind == "truncated-gaussian":
            m1 = np.array([ax.mean() for ax in self._axes])
            m2 = np.array([ax.var() for ax in self._axes]) + m1**2
            return m1, m2
        m1 = np.zeros(4)
        m2 = np.zeros(4)
        for lo, hi, m in self._boxes():
            w = m / self.mass
            m1 += w * 0.5 * (lo + hi)
            m2 += w * (lo * lo + lo * hi + hi * hi) / 3.0
        return m1, m2

    def _shifted_moments(self):
        m1, m2 = self._axis_moments()
        s = np.array(self.shift)
        return m1 + s, m2 + 2 * s * m1 + s * s

    @property
    def mean_vector(self) -> np.ndarray:
        return self._shifted_moments()[0]

    @property
    def kinetic_energy(self) -> float:
        """E0 = int |v|^2/2 f0."""
        _, m2 = self._shifted_moments()
        return float(0.5 * self.mass * (m2[2] + m2[3]))

    @property
    def second_moment(self) -> float:
        """m2(0) = int |x|^2 f0."""
        _, m2 = self._shifted_moments()
        return float(self.mass * (m2[0] + m2[1]))

    # -- sampling ----------------------------------------------------------

    def sample(self, n: int, seed: int) -> np.ndarray:
        """``n`` i.i.d. draws from f0/mass by rejection on the support box."""
        if int(n) < 1:
            raise ValueError("number of samples must be a positive integer")
        rng = np.random.default_rng(seed)
        lo = np.min([b[0] for b in self._boxes()], axis=0)
        hi = np.max([b[1] for b in self._boxes()], axis=0)
        top = self.sup
        vol = np.prod(hi - lo)
        accept_rate = self.mass / (top * vol)
        out = np.empty((n, 4))
        filled = 0
        while filled < n:
            batch = max(1024, int(1.2 * (n - filled) / accept_rate))
            z = lo + (hi - lo) * rng.random((batch, 4))
            u = rng.random(batch)
            keep = z[u * top < self._base_pdf(z)]
            take = min(len(keep), n - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out + np.array(self.shift)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "mass": self.mass, "lo": list(self.lo), "hi": list(self.hi)}
        if self.kind == "truncated-gaussian":
            d.update(mean=list(self.mean), std=list(self.std))
        if self.kind == "two-bump":
            d.update(lo2=list(self.lo2), hi2=list(self.hi2), fraction=self.fraction)
        if any(self.shift):
            d["shift"] = list(self.shift)
        return d
