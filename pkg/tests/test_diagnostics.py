"""Diagnostic functionals and the bound certificates."""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from kinflow import (BoundCertificates, CutoffForce, DiagnosticRecord, ForceModel,
                     InitialDensity, MollifiedDrive, ParticleEnsemble, advance, certify_energy,
                     certify_mass, certify_maximum_principle, certify_second_moment, record,
                     sample_initial)
from kinflow.diagnostics import certify_all

FREE = ForceModel(k_n=0.0)
BOX = InitialDensity("product-uniform-box", (0, 0, -1, -1), (1, 1, 1, 1), mass=2.0)


def certs_for(ens, cf, md, **kw):
    r0 = record(ens)
    return BoundCertificates.derive(cf, md, ens.mass, r0.kinetic, r0.second_moment, **kw)


def test_record_trivial_values():
    still = ParticleEnsemble(np.array([[1.0, 2.0, 0.0, 0.0]] * 3), 0.5)
    r = record(still)
    assert r.kinetic == 0.0 and r.mass == 1.5 and r.second_moment == 0.5 * 3 * 5
    assert r.sup_log_growth == 0.0 and math.copysign(1, r.sup_log_growth) == 1
    one = ParticleEnsemble(np.array([[0.0, 0.0, 3.0, 4.0]]), 1.0)
    assert record(one).kinetic == 12.5


def test_decoupled_energy_and_moment_closed_forms():
    ens = sample_initial(BOX, 256, 0)
    fin, recs = advance(ens, CutoffForce(FREE, 256), MollifiedDrive(), 1.0, 1e-3, stride=100)
    E0 = recs[0].kinetic
    assert recs[-1].kinetic == pytest.approx(E0 * math.exp(-2), rel=1e-6)
    x0, v0 = ens.x, ens.v
    for r in recs:
        x = x0 + v0 * (1 - math.exp(-r.t))
        assert r.second_moment == pytest.approx(ens.weight * np.sum(x * x), rel=1e-8)
        assert r.sup_log_growth == pytest.approx(2 * r.t, abs=1e-12)


def test_decoupled_certificates_are_equality_cases():
    ens = sample_initial(BOX, 256, 1)
    cf, md = CutoffForce(FREE, 256), MollifiedDrive()
    _, recs = advance(ens, cf, md, 1.0, 1e-2)
    certs = certs_for(ens, cf, md)
    assert certs.A == 0.0 and certs.E_cap == recs[0].kinetic and certs.C_max == 2.0
    results = certify_all(recs, certs)
    assert all(r.passed for r in results)
    mp = certify_maximum_principle(recs, certs)
    assert abs(mp.worst) <= 1e-12


def test_energy_envelope_from_ode_oracle():
    # E0 above (A/2)^2 with a weak constant drive: E decays and stays under
    # the solution of dE/dt = A sqrt(E) - 2E started at E0
    c = (0.05, 0.0)
    ens = sample_initial(BOX, 400, 2)
    cf, md = CutoffForce(FREE, 400), MollifiedDrive.for_particles(400, value=c)
    _, recs = advance(ens, cf, md, 3.0, 1e-2, stride=10)
    certs = certs_for(ens, cf, md)
    assert recs[0].kinetic > (certs.A / 2) ** 2
    sol = solve_ivp(lambda t, e: certs.A * np.sqrt(np.maximum(e, 0)) - 2 * e, (0, 3.0),
                    [recs[0].kinetic], dense_output=True, rtol=1e-10, atol=1e-12)
    for r in recs:
        assert r.kinetic <= sol.sol(r.t)[0] * (1 + 1e-8)
    e = [r.kinetic for r in recs[1:]]
    assert all(b < a for a, b in zip(e, e[1:]))
    assert certify_energy(recs, certs).passed


def test_spring_certificates_pass():
    side = 4.0
    dens = InitialDensity("product-uniform-box", (0, 0, -0.5, -0.5), (side, side, 0.5, 0.5),
                          mass=side * side)
    ens = sample_initial(dens, 100, 3)
    cf = CutoffForce(ForceModel(), 100)
    md = MollifiedDrive.for_particles(100, kind="gaussian-well", amplitude=0.5,
                                      center=(2, 2), width=1.0)
    _, recs = advance(ens, cf, md, 1.0, 5e-3)
    certs = certs_for(ens, cf, md, f0_sup=dens.sup)
    results = certify_all(recs, certs)
    assert all(r.passed for r in results), [r.line() for r in results]
    # strictly below C_max t once interactions act (t = 0 is the equality)
    assert certify_maximum_principle(recs[1:], certs).worst < 0


def test_certificates_are_monotone_in_their_constants():
    ens = sample_initial(BOX, 200, 4)
    md = MollifiedDrive.for_particles(200, value=(0.3, 0.1))
    cf = CutoffForce(ForceModel(k_n=0.5), 200)
    _, recs = advance(ens, cf, md, 1.0, 1e-2)
    tight = certs_for(ens, cf, md)
    loose = certs_for(ens, CutoffForce(ForceModel(k_n=1.0, gamma_n=1.0), 200),
                      MollifiedDrive.for_particles(200, value=(0.6, 0.2)))
    assert loose.A >= tight.A and loose.E_cap >= tight.E_cap and loose.C_max >= tight.C_max
    for check in (certify_energy, certify_second_moment, certify_maximum_principle):
        a, b = check(recs, tight), check(recs, loose)
        assert b.worst <= a.worst
        assert a.passed <= b.passed


def test_energy_failure_path():
    ens = sample_initial(BOX, 50, 5)
    cf, md = CutoffForce(FREE, 50), MollifiedDrive()
    _, recs = advance(ens, cf, md, 0.1, 1e-2)
    bad = certs_for(ens, cf, md, E_cap=0.5 * recs[0].kinetic)
    res = certify_energy(recs, bad)
    assert not res.passed and res.worst == pytest.approx(2.0)
    assert "FAIL" in res.line()


def test_second_moment_bound_and_failure():
    recs = [DiagnosticRecord(t, 1.0, 0.1, 1.0 + t, 0.0) for t in (0.0, 0.5, 1.0)]
    certs = BoundCertificates(0.0, 0.1, 2.0, 1.0, 0.1, 1.0)
    assert certify_second_moment(recs, certs).passed
    assert not certify_second_moment(recs, replace(certs, m2_0=0.0, E_cap=0.0)).passed
    assert certs.m2_bound(1.0) == pytest.approx(1.2 * math.e)


def test_max_principle_needs_finite_jacobian_data():
    certs = BoundCertificates(0.0, 1.0, 2.0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        certify_maximum_principle([DiagnosticRecord(0.0, 1.0, 0.0, 0.0, math.nan)], certs)
    with pytest.raises(ValueError):
        certify_maximum_principle([], certs)


def test_max_principle_density_cross_check_is_informational():
    certs = BoundCertificates(0.0, 1.0, 2.0, 0.0, 1.0, 1.0, f0_sup=1.0)
    recs = [DiagnosticRecord(0.0, 1.0, 0.0, 0.0, 0.0, 50.0)]
    res = certify_maximum_principle(recs, certs, stat_margin=0.1)
    assert res.passed and "exceeded" in res.detail


def test_mass_certificate_is_exact():
    recs = [DiagnosticRecord(t, 1.0, 0.0, 0.0, 0.0) for t in (0, 1)]
    assert certify_mass(recs).passed
    recs.append(DiagnosticRecord(2, math.nextafter(1.0, 2.0), 0.0, 0.0, 0.0))
    res = certify_mass(recs)
    assert not res.passed and res.worst > 0


def test_constants_are_nonnegative_and_documented():
    cf = CutoffForce(ForceModel(), 1000)
    md = MollifiedDrive.for_particles(1000, kind="lane", amplitude=0.7, center=(0, 0))
    c = BoundCertificates.derive(cf, md, 10.0, 2.0, 5.0)
    assert min(c.A, c.E_cap, c.C_max) >= 0
    assert c.A == pytest.approx((cf.model.f_inf_bound * 10 + md.sup_g) * math.sqrt(20))
    assert c.C_max == cf.model.grad_v_bound * 10 + 2
    assert set(c.to_dict()) >= {"A", "E_cap", "C_max", "m2_0", "E0"}
