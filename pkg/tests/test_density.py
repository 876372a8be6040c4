"""Phase-space density estimates and the Liouville residual."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kinflow import (CutoffForce, ForceModel, InitialDensity, MollifiedDrive, PhaseGrid4D,
                     advance, histogram_density, kde_density, liouville_residual,
                     sample_initial, sup_density)
from kinflow.density import OutOfGridError, read_density, write_density

UNIT = InitialDensity("product-uniform-box", (0, 0, 0, 0), (1, 1, 1, 1), mass=1.0)
UNIT_GRID = PhaseGrid4D((0, 0, 0, 0), (1, 1, 1, 1), 10)


@pytest.fixture(scope="module")
def unit_sample():
    return sample_initial(UNIT, 100_000, 0)


def test_single_cell_concentration():
    z = np.tile([0.15, 0.15, 0.15, 0.15], (7, 1))
    est = histogram_density((z, 0.5), UNIT_GRID)
    assert sup_density(est) == 3.5 / UNIT_GRID.cell_volume
    assert np.count_nonzero(est.values) == 1


@given(st.integers(0, 2**32 - 1), st.integers(1, 500))
def test_histogram_integral_is_mass(seed, n):
    z = np.random.default_rng(seed).normal(size=(n, 4))
    est = histogram_density((z, 3.0 / n))
    assert est.integral() == pytest.approx(3.0, rel=1e-12)
    assert np.all(est.values >= 0)


def test_points_outside_grid_are_listed():
    z = np.array([[0.5] * 4, [1.5, 0.5, 0.5, 0.5], [0.5] * 4, [0.5, 0.5, 0.5, -0.1]])
    with pytest.raises(OutOfGridError) as info:
        histogram_density((z, 1.0), UNIT_GRID)
    assert list(info.value.indices) == [1, 3]


def test_upper_boundary_belongs_to_last_cell():
    assert UNIT_GRID.locate([[1.0, 1.0, 0.0, 0.999]]).tolist() == [[9, 9, 0, 9]]


def test_grid_validation():
    with pytest.raises(ValueError):
        PhaseGrid4D((0,) * 4, (1,) * 4, 1)
    with pytest.raises(ValueError):
        PhaseGrid4D((0,) * 4, (1, 1, 0, 1), 4)


def test_uniform_cells_within_binomial_error(unit_sample):
    grid = PhaseGrid4D((0,) * 4, (1,) * 4, 4)
    est = histogram_density(unit_sample, grid)
    n = unit_sample.n
    p = grid.cell_volume  # f0 = 1 on the unit box
    se = math.sqrt(n * p * (1 - p)) / (n * grid.cell_volume)
    assert np.all(np.abs(est.values - UNIT.sup) <= 5 * se)


def test_initial_sup_within_binomial_error(unit_sample):
    grid = PhaseGrid4D((0,) * 4, (1,) * 4, 4)
    n, p = unit_sample.n, grid.cell_volume
    rel = math.sqrt((1 - p) / (n * p))
    assert sup_density(histogram_density(unit_sample, grid)) <= UNIT.sup * (1 + 5 * rel)


def test_coarsening_preserves_mass_and_bounds_sup(unit_sample):
    est = histogram_density(unit_sample, UNIT_GRID.__class__((0,) * 4, (1,) * 4, 8))
    coarse = est.coarsen(2)
    assert coarse.integral() == pytest.approx(est.integral(), rel=1e-12)
    assert coarse.sup() <= est.sup()
    with pytest.raises(ValueError):
        est.coarsen(3)


def test_marginals_integrate_to_mass(unit_sample):
    est = histogram_density(unit_sample, UNIT_GRID)
    w = UNIT_GRID.widths
    assert est.marginal("x").sum() * w[0] * w[1] == pytest.approx(1.0, rel=1e-12)
    assert est.marginal("v").sum() * w[2] * w[3] == pytest.approx(1.0, rel=1e-12)


def test_kde_mass_and_interior_values(unit_sample):
    est = kde_density(unit_sample, bins=12)
    assert est.integral() == pytest.approx(1.0, rel=1e-3)
    assert np.all(est.values >= 0)
    assert len(est.bandwidth) == 4
    centre = est.evaluate(np.full((1, 4), 0.5))[0]
    assert centre == pytest.approx(1.0, rel=0.1)


def test_density_export_round_trip(tmp_path, unit_sample):
    est = kde_density(unit_sample, bins=6)
    paths = write_density(est, tmp_path / "f")
    assert all(p.exists() for p in paths)
    back = read_density(tmp_path / "f")
    assert np.array_equal(back.values, est.values)
    assert back.grid == est.grid and back.bandwidth == est.bandwidth
    header = (tmp_path / "f_x.csv").read_text().splitlines()[0]
    assert header == "x1,x2,density"


# -- Liouville residual ------------------------------------------------------

def test_residual_needs_initial_points(unit_sample):
    ens = unit_sample.copy()
    ens.initial = None
    with pytest.raises(ValueError):
        liouville_residual(ens, UNIT, lambda z: np.ones(len(z)))


def test_decoupled_residual_against_exact_density():
    f0 = InitialDensity("truncated-gaussian", (-1,) * 4, (1,) * 4, mean=(0, 0, 0, 0),
                        std=(0.5, 0.5, 0.3, 0.3))
    ens = sample_initial(f0, 2000, 1)
    t = 1.0
    fin, _ = advance(ens, CutoffForce(ForceModel(k_n=0.0), 2000), MollifiedDrive(), t, 1e-3)

    def exact(z):
        x, v = z[:, :2], z[:, 2:]
        back = np.column_stack([x - v * (math.exp(t) - 1), v * math.exp(t)])
        return f0.pdf(back) * math.exp(2 * t)

    r = liouville_residual(fin, f0, exact)
    assert r.max() <= 1e-8


def test_initial_residual_is_estimator_noise(unit_sample):
    r = liouville_residual(unit_sample, UNIT, histogram_density(unit_sample, UNIT_GRID))
    # counts are near Poisson(10), so residuals sit on multiples of 0.1
    assert np.median(r) <= 0.2 * (1 + 1e-9)


def test_decoupled_sup_density_growth(unit_sample):
    fin, _ = advance(unit_sample, CutoffForce(ForceModel(k_n=0.0), unit_sample.n),
                     MollifiedDrive(), 1.0, 0.05)
    grid = PhaseGrid4D.covering(fin.z, bins=4, inflate=0.0)
    est = histogram_density(fin, grid)
    n = fin.n
    p = est.sup() * grid.cell_volume / fin.mass
    rel = math.sqrt((1 - p) / (n * p))
    assert est.sup() <= UNIT.sup * math.exp(2.0) * (1 + 5 * rel)


@pytest.mark.slow
def test_spring_residual_stays_near_baseline():
    side = 126.0
    f0 = InitialDensity("product-uniform-box", (0, 0, -0.5, -0.5), (side, side, 0.5, 0.5),
                        mass=side * side)
    n = 100_000
    ens = sample_initial(f0, n, 2)
    grid0 = PhaseGrid4D(f0.lo, f0.hi, 10)
    r0 = np.median(liouville_residual(ens, f0, histogram_density(ens, grid0)))
    fin, _ = advance(ens, CutoffForce(ForceModel(), n), MollifiedDrive(), 1.0, 1e-2,
                     stride=10**9)
    grid1 = PhaseGrid4D.covering(fin.z, bins=10, inflate=0.0)
    r1 = np.median(liouville_residual(fin, f0, histogram_density(fin, grid1)))
    assert np.any(fin.log_jacobian != -2.0)
    assert r1 <= 2 * r0
