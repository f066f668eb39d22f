"""Energy-structure-preserving integration of x'' + mu x' + alpha x^p = 0."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DuffingParams,
    NonFiniteError,
    ParameterError,
    State,
    discrete_gradient,
    dissipation_functional,
    energy,
    modified_energy,
    potential,
    validate_params,
    vector_field,
)
from .integrator import (  # noqa: E402
    IntegrationError,
    MultiRootWarning,
    NonConvergenceError,
    SchemeConfig,
    StepOutcome,
    Trajectory,
    integrate,
    rk4_integrate,
    rk4_step,
    sp_residual,
    sp_residual_derivative,
    sp_step,
)
