"""Phase-space density reconstruction on a regular 4-d grid.

Two estimators of f(t, x, v) from a particle ensemble: a plain histogram
(cell value = weight * count / cell volume) and a binned product-Gaussian
KDE with Scott bandwidths. Both feed the maximum-principle cross-check and
the Liouville residual, which compares the estimate at each particle with
the value transported along its characteristic, ``f0(z_i(0)) exp(-L_i)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

AXES = ("x1", "x2", "v1", "v2")
RESIDUAL_FLOOR = 1e-8
KDE_TRUNCATE = 4.0


class OutOfGridError(ValueError):
    """Particles fall outside the grid bounds."""

    def __init__(self, indices):
        self.indices = np.asarray(indices)
        shown = ", ".join(str(i) for i in self.indices[:10])
        more = "" if len(self.indices) <= 10 else f" (+{len(self.indices) - 10} more)"
        super().__init__(f"{len(self.indices)} particle(s) outside the grid: {shown}{more}")


@dataclass(frozen=True)
class PhaseGrid4D:
    """Axis-aligned box ``[lo, hi]`` in (x1, x2, v1, v2) split into ``bins`` cells."""

    lo: tuple
    hi: tuple
    bins: tuple

    def __post_init__(self):
        lo = tuple(float(a) for a in np.broadcast_to(self.lo, 4))
        hi = tuple(float(a) for a in np.broadcast_to(self.hi, 4))
        bins = tuple(int(b) for b in np.broadcast_to(self.bins, 4))
        if any(b < 2 for b in bins):
            raise ValueError("every axis needs at least 2 bins")
        if any(not h > l for l, h in zip(lo, hi)):
            raise ValueError("grid needs lo < hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "bins", bins)

    @classmethod
    def covering(cls, points, bins=20, inflate: float = 0.05, pad=0.0) -> "PhaseGrid4D":
        """Bounding box of ``points`` inflated by ``inflate`` of its span plus ``pad``."""
        z = np.asarray(points, dtype=float).reshape(-1, 4)
        lo, hi = z.min(axis=0), z.max(axis=0)
        span = hi - lo
        margin = inflate * np.where(span > 0, span, 1.0) + pad
        return cls(tuple(lo - margin), tuple(hi + margin), bins)

    @property
    def widths(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / np.array(self.bins)

    @property
    def cell_volume(self) -> float:
        w = self.widths
        return float(w[0] * w[1] * w[2] * w[3])

    @property
    def shape(self) -> tuple:
        return self.bins

    def centers(self, axis: int) -> np.ndarray:
        return self.lo[axis] + (np.arange(self.bins[axis]) + 0.5) * self.widths[axis]

    def locate(self, z, strict: bool = True):
        """Cell indices ``(n, 4)`` of points; ``hi`` belongs to the last cell.

        With ``strict`` an :class:`OutOfGridError` lists points outside the
        box; otherwise those rows come back as -1.
        """
        z = np.asarray(z, dtype=float).reshape(-1, 4)
        lo, hi = np.array(self.lo), np.array(self.hi)
        outside = np.any((z < lo) | (z > hi) | ~np.isfinite(z), axis=1)
        if strict and np.any(outside):
            raise OutOfGridError(np.flatnonzero(outside))
        idx = np.floor((z - lo) / self.widths).astype(np.int64)
        idx = np.minimum(idx, np.array(self.bins) - 1)
        idx[outside] = -1
        return idx

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "bins": list(self.bins),
                "cell_volume": self.cell_volume, "axes": list(AXES)}


@dataclass(frozen=True)
class DensityEstimate:
    grid: PhaseGrid4D
    values: np.ndarray
    bandwidth: tuple | None = None

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def sup(self) -> float:
        return float(self.values.max())

    def evaluate(self, z) -> np.ndarray:
        """Piecewise-constant value at points; zero outside the grid."""
        idx = self.grid.locate(z, strict=False)
        out = np.zeros(len(idx))
        ok = idx[:, 0] >= 0
        i = idx[ok]
        out[ok] = self.values[i[:, 0], i[:, 1], i[:, 2], i[:, 3]]
        return out

    def __call__(self, z):
        return self.evaluate(z)

    def coarsen(self, factor: int = 2) -> "DensityEstimate":
        """Merge ``factor**4`` blocks of cells; mass is preserved."""
        b = np.array(self.grid.bins)
        if np.any(b % factor) or np.any(b // factor < 2):
            raise ValueError(f"bins {tuple(b)} cannot be coarsened by {factor}")
        nb = b // factor
        v = self.values.reshape(nb[0], factor, nb[1], factor, nb[2], factor, nb[3], factor)
        v = v.mean(axis=(1, 3, 5, 7))
        return DensityEstimate(PhaseGrid4D(self.grid.lo, self.grid.hi, tuple(nb)), v,
                               self.bandwidth)

    def marginal(self, which: str) -> np.ndarray:
        """Spatial (``"x"``) or velocity (``"v"``) marginal density on its 2-d grid."""
        w = self.grid.widths
        if which == "x":
            return self.values.sum(axis=(2, 3)) * w[2] * w[3]
        if which == "v":
            return self.values.sum(axis=(0, 1)) * w[0] * w[1]
        raise ValueError("marginal must be 'x' or 'v'")


def _points(ensemble):
    return (ensemble.z, ensemble.weight) if hasattr(ensemble, "z") else (
        np.asarray(ensemble[0], dtype=float), float(ensemble[1]))


def histogram_density(ensemble, grid: PhaseGrid4D | None = None) -> DensityEstimate:
    """Histogram estimate ``weight * count / cell_volume``.

    ``ensemble`` is a :class:`ParticleEnsemble` (or a ``(z, weight)`` pair).
    Raises :class:`OutOfGridError` if a particle lies outside ``grid``.
    """
    z, w = _points(ensemble)
    grid = grid or PhaseGrid4D.covering(z)
    idx = grid.locate(z)
    flat = np.ravel_multi_index(idx.T, grid.bins)
    counts = np.bincount(flat, minlength=int(np.prod(grid.bins)))
    values = (w * counts / grid.cell_volume).reshape(grid.bins)
    return DensityEstimate(grid, values)


def scott_bandwidth(z) -> np.ndarray:
    """Per-axis Scott bandwidth ``sigma_k n**(-1/(d+4))`` with d = 4."""
    z = np.asarray(z, dtype=float)
    sigma = z.std(axis=0, ddof=1) if len(z) > 1 else np.ones(z.shape[1])
    sigma = np.where(sigma > 0, sigma, 1e-12)
    return sigma * len(z) ** (-1.0 / 8.0)


def kde_density(ensemble, grid: PhaseGrid4D | None = None, bandwidth=None,
                bins=20) -> DensityEstimate:
    """Binned product-Gaussian KDE.

    Particles are histogrammed, then smoothed along each axis by a Gaussian
    of standard deviation ``h_k`` (truncated at 4 h_k). The default grid
    pads the bounding box by 4 h_k so no kernel mass is lost; on a
    user-supplied grid mass near the edges may be truncated.
    """
    z, w = _points(ensemble)
    h = scott_bandwidth(z) if bandwidth is None else np.broadcast_to(
        np.asarray(bandwidth, dtype=float), 4).copy()
    if grid is None:
        grid = PhaseGrid4D.covering(z, bins=bins, inflate=0.0, pad=KDE_TRUNCATE * h)
    hist = histogram_density((z, w), grid).values
    widths = grid.widths
    out = hist
    for axis in range(4):
        out = gaussian_filter1d(out, sigma=h[axis] / widths[axis], axis=axis, mode="constant",
                                truncate=KDE_TRUNCATE)
    return DensityEstimate(grid, np.maximum(out, 0.0), tuple(float(a) for a in h))


def sup_density(estimate: DensityEstimate) -> float:
    """Largest cell value of the estimate."""
    return estimate.sup()


def liouville_residual(ensemble, density0, estimate_t, floor: float = RESIDUAL_FLOOR) -> np.ndarray:
    """Per-particle relative mismatch against the transported initial density.

    ``r_i = |fhat(Z_i) - f0(z_i(0)) exp(-L_i)| / max(f0(z_i(0)) exp(-L_i), floor)``

    ``estimate_t`` is a :class:`DensityEstimate` or any callable on ``(n, 4)`` points.
    """
    if ensemble.initial is None:
        raise ValueError("ensemble does not carry its initial points")
    predicted = density0.pdf(ensemble.initial) * np.exp(-ensemble.log_jacobian)
    est = np.asarray(estimate_t(ensemble.z), dtype=float)
    return np.abs(est - predicted) / np.maximum(predicted, floor)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def write_density(estimate: DensityEstimate, prefix) -> list[Path]:
    """Write ``prefix.json`` (header), ``prefix.bin`` (little-endian f64,
    C order) and the x/v marginal slices as ``prefix_x.csv``/``prefix_v.csv``."""
    prefix = Path(prefix)
    header = {"grid": estimate.grid.to_dict(), "dtype": "<f8", "order": "C",
              "bandwidth": None if estimate.bandwidth is None else list(estimate.bandwidth),
              "data": prefix.name + ".bin"}
    paths = [prefix.with_suffix(".json"), prefix.with_suffix(".bin")]
    paths[0].write_text(json.dumps(header, indent=2))
    paths[1].write_bytes(np.ascontiguousarray(estimate.values, dtype="<f8").tobytes())
    g = estimate.grid
    for which, (a, b) in (("x", (0, 1)), ("v", (2, 3))):
        m = estimate.marginal(which)
        ca, cb = np.meshgrid(g.centers(a), g.centers(b), indexing="ij")
        path = prefix.parent / f"{prefix.name}_{which}.csv"
        rows = np.column_stack([ca.ravel(), cb.ravel(), m.ravel()])
        np.savetxt(path, rows, delimiter=",", header=f"{AXES[a]},{AXES[b]},density",
                   comments="", fmt="%.17g")
        paths.append(path)
    return paths


def read_density(prefix) -> DensityEstimate:
    prefix = Path(prefix)
    header = json.loads(prefix.with_suffix(".json").read_text())
    g = header["grid"]
    grid = PhaseGrid4D(tuple(g["lo"]), tuple(g["hi"]), tuple(g["bins"]))
    values = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f8")
    bw = header.get("bandwidth")
    return DensityEstimate(grid, values.reshape(grid.bins).astype(float),
                           None if bw is None else tuple(bw))
