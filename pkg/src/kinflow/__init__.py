"""Particle simulator and bound-certification harness for a 2-d kinetic
mean-field equation with a finite-range, non-Lipschitz interaction force."""

import os

# numba reads these once, at import; they must be set before any submodule
# pulls numba in.
_threads = os.environ.get("KINFLOW_THREADS")
if _threads:
    os.environ.setdefault("NUMBA_NUM_THREADS", _threads)
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"

from .kernels import (  # noqa: E402
    BumpProfile,
    CutoffForce,
    ForceModel,
    MollifiedDrive,
    div_v_field,
    eval_bump,
    eval_cutoff_force,
    eval_drive,
    eval_force,
    grad_v_cutoff_force,
    lipschitz_estimate,
)
from .initial import InitialDensity  # noqa: E402
from .flow import (  # noqa: E402
    NeighborGrid,
    ParticleEnsemble,
    advance,
    dobrushin_pair_run,
    mean_field_rhs,
    sample_initial,
    step,
)
from .diagnostics import (  # noqa: E402
    BoundCertificates,
    DiagnosticRecord,
    certify_energy,
    certify_mass,
    certify_maximum_principle,
    certify_second_moment,
    record,
)
from .density import (  # noqa: E402
    DensityEstimate,
    PhaseGrid4D,
    histogram_density,
    kde_density,
    liouville_residual,
    sup_density,
)
from .transport import (  # noqa: E402
    CouplingPlan,
    DiscreteMeasure,
    convergence_study,
    w1_exact,
)

__all__ = [
    "BoundCertificates",
    "BumpProfile",
    "CouplingPlan",
    "CutoffForce",
    "DensityEstimate",
    "DiagnosticRecord",
    "DiscreteMeasure",
    "ForceModel",
    "InitialDensity",
    "MollifiedDrive",
    "NeighborGrid",
    "ParticleEnsemble",
    "PhaseGrid4D",
    "advance",
    "certify_energy",
    "certify_mass",
    "certify_maximum_principle",
    "certify_second_moment",
    "convergence_study",
    "div_v_field",
    "dobrushin_pair_run",
    "eval_bump",
    "eval_cutoff_force",
    "eval_drive",
    "eval_force",
    "grad_v_cutoff_force",
    "histogram_density",
    "kde_density",
    "lipschitz_estimate",
    "liouville_residual",
    "mean_field_rhs",
    "record",
    "sample_initial",
    "step",
    "sup_density",
    "w1_exact",
]
