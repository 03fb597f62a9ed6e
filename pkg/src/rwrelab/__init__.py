"""Numerical laboratory for random walks in low-disorder random environments.

Builds perturbed lattice models, evaluates the low-disorder expansion of the
asymptotic speed through order 3, verifies the auxiliary-walk identity on
bounded domains, and cross-checks everything against exact formulas,
truncated-series oracles, and direct annealed simulation.
"""

from .errors import NumericalError, UsageError
from .model import (
    Direction,
    ModelSpec,
    PerturbationAtom,
    PerturbationLaw,
    SiteEnvironment,
    TransitionKernel,
    covariance,
    directions,
    drift,
    one_point_modification,
    sample_site,
    third_moments,
)
from .green import (
    Domain,
    GreenTable,
    JTable,
    Symmetrization,
    green_finite,
    j_closed_form_1d,
    j_exact,
    j_limit,
    j_series,
    killing_rate_quadratic_check,
    one_point_green_ratio,
    origin_green,
    perturbation_bound_report,
    series_oracle,
    stationary_env,
    symmetrize,
    torus_quadrature,
)
from .expansion import (
    ExpansionReport,
    d2_one_point_route,
    second_order_weights,
    solomon_speed,
    speed_expansion,
    speedup_integral,
    third_order_weights,
)
from .kalikow import (
    AuxiliaryKernel,
    DriftField,
    auxiliary_expansion_residuals,
    auxiliary_kernel,
    convex_hull_2d,
    drift_field,
    hull_distance,
    kalikow_identity_residual,
)
from .montecarlo import (
    DecayTable,
    OrderScalingReport,
    SimEstimate,
    annealed_speed,
    order_scaling,
    simulate_endpoints,
    transition_difference_decay,
)
from .fixtures import FIXTURES, get_fixture

__all__ = [
    "Direction",
    "Domain",
    "DecayTable",
    "DriftField",
    "ExpansionReport",
    "FIXTURES",
    "GreenTable",
    "JTable",
    "ModelSpec",
    "NumericalError",
    "OrderScalingReport",
    "PerturbationAtom",
    "PerturbationLaw",
    "SimEstimate",
    "SiteEnvironment",
    "Symmetrization",
    "TransitionKernel",
    "UsageError",
    "AuxiliaryKernel",
    "annealed_speed",
    "auxiliary_expansion_residuals",
    "auxiliary_kernel",
    "convex_hull_2d",
    "covariance",
    "d2_one_point_route",
    "directions",
    "drift",
    "drift_field",
    "get_fixture",
    "green_finite",
    "hull_distance",
    "j_closed_form_1d",
    "j_exact",
    "j_limit",
    "j_series",
    "kalikow_identity_residual",
    "killing_rate_quadratic_check",
    "one_point_green_ratio",
    "one_point_modification",
    "order_scaling",
    "origin_green",
    "perturbation_bound_report",
    "sample_site",
    "second_order_weights",
    "series_oracle",
    "simulate_endpoints",
    "solomon_speed",
    "speed_expansion",
    "speedup_integral",
    "stationary_env",
    "symmetrize",
    "third_moments",
    "third_order_weights",
    "torus_quadrature",
    "transition_difference_decay",
]

__version__ = "0.1.0"
