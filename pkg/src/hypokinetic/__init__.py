"""Linear kinetic equations with random scattering: hypocoercive decay rates,
Knudsen-number scalings and the z-derivative hierarchy, on a periodic
discrete-velocity grid."""

from .operators import (
    AssumptionReport,
    CoercivityError,
    KineticOperator,
    build_anisotropic,
    build_auxiliary_A,
    build_bgk,
    build_transport,
    check_assumptions,
    estimate_alpha,
    estimate_beta,
    estimate_gamma,
)
from .phase_space import Field, PhaseGrid, build_grid, fluctuation, inner_product, mass, norm, project_pi
from .rates import (
    CoercivityConstants,
    RatePlan,
    ScaledConstants,
    c_const,
    lambda_numeric,
    lambda_of_eps,
    lower_bound_highfield,
    lower_bound_parabolic,
    rate_plan,
    rescale,
    uniform_rate_over_z,
)
from .solver import KineticSystem, Scenario, StabilityError, Trajectory, dissipation, entropy, fit_decay_rate, integrate, step
from .uq import BoundSeries, Hierarchy, SigmaModel, collocation_derivatives, estimate_radius, solve_hierarchy

__version__ = "0.1.0"
