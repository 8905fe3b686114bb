"""Minimum contrast estimation for small-noise diffusions observed on a fixed grid."""
from .contrasts import (
    CONTRAST_KINDS,
    ObservedPath,
    contrast_cls,
    contrast_small_delta,
    contrast_weighted,
    gaussian_loglik,
    residuals,
)
from .errors import ConfigError, NoConvergence, NonFiniteState, SingularCovariance, SmallNoiseError, ZeroExposure
from .estimate import (
    EstimationResult,
    EstimatorOptions,
    confidence_intervals,
    info_I_b,
    info_I_delta,
    info_I_sigma,
    info_J_delta,
    minimize,
)
from .flow import FlowSolution, SamplingGrid, d_matrices, resolvent, solve_flow
from .harness import ExperimentConfig, McSummary, report, run_experiment
from .models import BUILTIN_MODELS, LinkSpec, ModelSpec, ParamBox, get_model, make_model
from .simulate import (
    JumpTrajectory,
    discretize,
    emergence_filter,
    jump_mle,
    make_rng,
    simulate_gillespie_sir,
    simulate_sde,
)

__version__ = "0.1.0"
