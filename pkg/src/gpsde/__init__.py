"""Nonparametric SDE drift and diffusion learning with inducing-point
Gaussian process fields.

The model simulates path distributions from interpolated drift and
diffusion fields, scores them with a Monte Carlo likelihood, and fits the
inducing values by MAP gradient ascent using exact forward sensitivities
of the simulated paths.
"""

from .errors import (
    DataError,
    FitError,
    GpsdeError,
    InputError,
    InternalError,
    NumericalError,
    SensitivityError,
    SimulationError,
)
from .kernels import KernelParams, gram, gram_blocked, rbf, rbf_grad_x
from .field import (
    FieldCache,
    InducingModel,
    build_cache,
    diff_grad_u,
    diff_grad_x,
    diffusion_at,
    drift_at,
    drift_jac_u,
    drift_jac_x,
    log_prior,
    log_prior_grad,
    update_values,
)
from .sim import (
    PathBundle,
    SimConfig,
    TimeGrid,
    build_grid,
    euler_maruyama,
    sample_increments,
    sample_paths,
    state_density,
)
from .sensitivity import (
    PathSensitivities,
    SensitivityState,
    propagate_step,
    simulate_with_sensitivities,
)
from .objective import (
    ObjectiveValue,
    Trajectory,
    log_posterior,
    mc_loglik,
    mc_loglik_grad,
)
from .fit import (
    FitConfig,
    FitReport,
    build_inducing_grid,
    default_lengthscale_grid,
    fit_map,
    gradient_match_init,
)
from .systems import (
    GenSpec,
    ParametricSystem,
    distribution_discrepancy,
    diffusion_error,
    double_well,
    drift_error,
    energy_distance,
    generate,
    kde_l2_distance,
    oscillator_hotspot,
    van_der_pol,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "FitError",
    "GpsdeError",
    "InputError",
    "InternalError",
    "NumericalError",
    "SensitivityError",
    "SimulationError",
    "KernelParams",
    "gram",
    "gram_blocked",
    "rbf",
    "rbf_grad_x",
    "FieldCache",
    "InducingModel",
    "build_cache",
    "diff_grad_u",
    "diff_grad_x",
    "diffusion_at",
    "drift_at",
    "drift_jac_u",
    "drift_jac_x",
    "log_prior",
    "log_prior_grad",
    "update_values",
    "PathBundle",
    "SimConfig",
    "TimeGrid",
    "build_grid",
    "euler_maruyama",
    "sample_increments",
    "sample_paths",
    "state_density",
    "PathSensitivities",
    "SensitivityState",
    "propagate_step",
    "simulate_with_sensitivities",
    "ObjectiveValue",
    "Trajectory",
    "log_posterior",
    "mc_loglik",
    "mc_loglik_grad",
    "FitConfig",
    "FitReport",
    "build_inducing_grid",
    "default_lengthscale_grid",
    "fit_map",
    "gradient_match_init",
    "GenSpec",
    "ParametricSystem",
    "distribution_discrepancy",
    "diffusion_error",
    "double_well",
    "drift_error",
    "energy_distance",
    "generate",
    "kde_l2_distance",
    "oscillator_hotspot",
    "van_der_pol",
    "__version__",
]
