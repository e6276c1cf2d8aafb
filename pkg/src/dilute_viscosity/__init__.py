"""Effective viscosity of dilute rigid-sphere Stokes suspensions at dipole order."""

from .effective_viscosity import (
    Mu2Result,
    cluster_expansion_build,
    finite_n_viscosity,
    mu2_evaluate,
    nbody_solve,
    nu2_evaluate,
    pair_functional,
    residual_diagnostics,
)
from .point_process import (
    CorrelationEstimate,
    Domain,
    PointConfiguration,
    check_decorrelation,
    check_h1,
    estimate_g2,
    matern1_thin,
    poisson_sample,
)
from .single_sphere import (
    boundary_stress,
    einstein_coefficient,
    m0_kernel,
    phi0_pressure,
    phi0_velocity,
    single_sphere_functional,
)
from .tensor_core import BASIS, rotation_action, sphere_quadrature
from .two_sphere import (
    FlowExpansion,
    PairTable,
    TwoSphereSolution,
    cutoff_kernel,
    far_field_tensor,
    near_field_tensor,
    psi_strain,
    reflect_dipole,
    stresslet_extract,
    two_sphere_solve,
)

__version__ = "0.1.0"

__all__ = [
    "BASIS",
    "rotation_action",
    "sphere_quadrature",
    "CorrelationEstimate",
    "Domain",
    "FlowExpansion",
    "Mu2Result",
    "PairTable",
    "PointConfiguration",
    "TwoSphereSolution",
    "boundary_stress",
    "check_decorrelation",
    "check_h1",
    "cluster_expansion_build",
    "cutoff_kernel",
    "einstein_coefficient",
    "estimate_g2",
    "far_field_tensor",
    "finite_n_viscosity",
    "m0_kernel",
    "matern1_thin",
    "mu2_evaluate",
    "nbody_solve",
    "near_field_tensor",
    "nu2_evaluate",
    "pair_functional",
    "phi0_pressure",
    "phi0_velocity",
    "poisson_sample",
    "psi_strain",
    "reflect_dipole",
    "residual_diagnostics",
    "single_sphere_functional",
    "stresslet_extract",
    "two_sphere_solve",
]
