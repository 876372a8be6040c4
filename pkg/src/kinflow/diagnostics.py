"""Conserved and bounded functionals of the particle flow, and their certificates.

Three derived constants turn the qualitative a-priori bounds into checks:

* ``A = (f_inf_bound * M0 + sup|g|) * sqrt(2 M0)`` bounds the forcing in
  ``dE/dt <= A sqrt(E) - 2E`` (Cauchy-Schwarz on ``int v.(F*f + g) f``),
  so ``E(t) <= E_cap = max(E0, (A/2)**2)``.
* ``d/dt m2 = 2 int x.v f <= m2 + 2E`` gives ``m2(t) <= (m2(0) + 2 E_cap) e^t``.
* ``div_v`` of the field is at most ``C_max = grad_v_bound * M0 + 2`` in
  absolute value, so ``-L_i(t) <= C_max t`` along every characteristic.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .kernels import CutoffForce, MollifiedDrive

MAX_PRINCIPLE_SLACK = 1e-6
CERT_TOLERANCE = 1e-2


@dataclass(frozen=True)
class DiagnosticRecord:
    t: float
    mass: float
    kinetic: float
    second_moment: float
    sup_log_growth: float
    sup_density: float | None = None

    def row(self) -> list:
        return [self.t, self.mass, self.kinetic, self.second_moment, self.sup_log_growth,
                self.sup_density]


def record(ensemble, sup_density: float | None = None) -> DiagnosticRecord:
    """Mass, kinetic energy, second moment and max(-L_i) of an ensemble.

    ``mass`` is ``weight * n`` and never recomputed from the state.
    Sums use numpy's pairwise summation.
    """
    v = ensemble.z[:, 2:]
    x = ensemble.z[:, :2]
    w = ensemble.weight
    kinetic = w * 0.5 * float(np.sum(v[:, 0] * v[:, 0] + v[:, 1] * v[:, 1]))
    m2 = w * float(np.sum(x[:, 0] * x[:, 0] + x[:, 1] * x[:, 1]))
    growth = float(np.max(-ensemble.log_jacobian)) + 0.0  # no -0.0 at t = 0
    return DiagnosticRecord(float(ensemble.time), w * ensemble.n, kinetic, m2, growth,
                            None if sup_density is None else float(sup_density))


@dataclass(frozen=True)
class BoundCertificates:
    """Explicit constants of the energy, moment and maximum-principle bounds."""

    A: float
    E_cap: float
    C_max: float
    m2_0: float
    E0: float
    mass: float
    f0_sup: float | None = None

    @classmethod
    def derive(cls, cf: CutoffForce, md: MollifiedDrive, mass: float, E0: float, m2_0: float,
               f0_sup: float | None = None, E_cap: float | None = None) -> "BoundCertificates":
        """Build the constants; ``E_cap`` may be overridden (debugging the fail path)."""
        m = cf.model
        f_inf = m.f_inf_bound if m.interacting else 0.0
        grad_v = m.grad_v_bound if m.interacting else 0.0
        A = (f_inf * mass + md.sup_g) * math.sqrt(2.0 * mass)
        cap = max(E0, (A / 2.0) ** 2) if E_cap is None else float(E_cap)
        return cls(A, cap, grad_v * mass + 2.0, m2_0, E0, mass, f0_sup)

    def m2_bound(self, t: float) -> float:
        return (self.m2_0 + 2.0 * self.E_cap) * math.exp(t)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CertificateResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""

    def line(self) -> str:
        return f"{self.name:<18} {'PASS' if self.passed else 'FAIL'}  worst={self.worst:.6g}  {self.detail}"


def _need(trajectory):
    if not trajectory:
        raise ValueError("certificate needs a nonempty trajectory")


def certify_energy(trajectory: Sequence[DiagnosticRecord], certs: BoundCertificates,
                   tol: float = CERT_TOLERANCE) -> CertificateResult:
    """E(t) <= E_cap (1 + tol) at every record; ``worst`` is max E/E_cap."""
    _need(trajectory)
    if certs.E_cap > 0:
        worst = max(r.kinetic / certs.E_cap for r in trajectory)
    else:
        worst = 0.0 if all(r.kinetic == 0 for r in trajectory) else math.inf
    return CertificateResult("energy", worst <= 1.0 + tol, worst, f"E_cap={certs.E_cap:.6g}")


def certify_second_moment(trajectory: Sequence[DiagnosticRecord], certs: BoundCertificates,
                          tol: float = CERT_TOLERANCE) -> CertificateResult:
    """m2(t) <= (m2(0) + 2 E_cap) e^t (1 + tol); ``worst`` is max m2/bound."""
    _need(trajectory)
    worst = 0.0
    for r in trajectory:
        b = certs.m2_bound(r.t)
        if b > 0:
            worst = max(worst, r.second_moment / b)
        elif r.second_moment > 0:
            worst = math.inf
    return CertificateResult("second_moment", worst <= 1.0 + tol, worst)


def certify_maximum_principle(trajectory: Sequence[DiagnosticRecord], certs: BoundCertificates,
                              slack: float = MAX_PRINCIPLE_SLACK,
                              stat_margin: float | None = None) -> CertificateResult:
    """max_i(-L_i(t)) <= C_max t + slack at every record.

    ``worst`` is the largest ``max(-L_i) - C_max t``. If records carry a
    density sup and ``stat_margin`` is given, ``sup f <= ||f0|| e^{C_max t}
    (1 + stat_margin)`` is reported in ``detail`` (informational only).
    """
    _need(trajectory)
    if any(r.sup_log_growth is None or not math.isfinite(r.sup_log_growth) for r in trajectory):
        raise ValueError("maximum-principle certificate needs finite log-Jacobian data")
    worst = max(r.sup_log_growth - certs.C_max * r.t for r in trajectory)
    detail = f"C_max={certs.C_max:.6g}"
    if stat_margin is not None and certs.f0_sup is not None:
        dens = [(r.sup_density, certs.f0_sup * math.exp(certs.C_max * r.t) * (1 + stat_margin))
                for r in trajectory if r.sup_density is not None]
        if dens:
            ok = all(s <= b for s, b in dens)
            detail += f" density_check={'ok' if ok else 'exceeded'}"
    return CertificateResult("max_principle", worst <= slack, worst, detail)


def certify_mass(trajectory: Sequence[DiagnosticRecord]) -> CertificateResult:
    """Mass is bit-identical across every record."""
    _need(trajectory)
    m0 = trajectory[0].mass
    same = all(r.mass == m0 for r in trajectory)
    spread = max(abs(r.mass - m0) for r in trajectory)
    return CertificateResult("mass", same, spread)


def certify_all(trajectory, certs) -> list[CertificateResult]:
    return [certify_energy(trajectory, certs), certify_second_moment(trajectory, certs),
            certify_maximum_principle(trajectory, certs), certify_mass(trajectory)]
