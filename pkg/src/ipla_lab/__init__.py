"""Interacting particle Langevin algorithm for maximum marginal likelihood."""

__version__ = "0.1.0"

from .diagnostics import (
    BoundInputs,
    EmpiricalLaw,
    calibrate_c1,
    estimate_c1,
    fit_exponential_rate,
    fit_rate,
    rmse_with_se,
    theorem1_bound,
    w2_1d,
    w2_to_dirac,
)
from .estimators import GaussianMMLE, LogisticMMLE, ParticleMMLE
from .exceptions import (
    ConfigError,
    DegenerateProbe,
    DivergedState,
    DomainError,
    EmptySample,
    GammaOutOfRange,
    NonFiniteEvaluation,
    SizeMismatch,
    UnsupportedModel,
)
from .model import AnalyticInfo, GradCheckReport, ModelSpec, check_gradients, probe_convexity
from .noise import NoiseStream, NoiseStreams, ZeroNoise
from .samplers import (
    InitSpec,
    RecorderSpec,
    RunConfig,
    RunRecord,
    SystemState,
    coupled_chaos_run,
    ipla_step,
    pgd_step,
    rescale,
    run_chain,
)
from .toy_models import (
    GaussianHierarchicalParams,
    LogisticRegressionParams,
    gaussian_meanfield_reference,
    make_gaussian_model,
    make_logistic_model,
    synthesize_logistic,
)
