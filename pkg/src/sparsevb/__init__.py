"""Variational Bayes matrix factorization and completion with a Laplace sparse prior."""

from .core import (
    ConvergenceMode,
    Dims,
    EmptyMask,
    FactorState,
    Hyperparams,
    NonPositiveParam,
    Observation,
    PriorB,
    Schedule,
    ShapeMismatch,
    SolveOptions,
    SolveReport,
    SparseVBError,
    ValidationError,
    load_bundle,
    save_bundle,
    validate,
)
from .linalg import SingularMatrix, ZeroReference, norm_dist, spd_inverse
from .metrics import Alignment, ErrorReport, align, compute_errors
from .oracle import IllConditioned, Moments, NotPositiveDefinite, QuadratureMethod, QuadratureSpec, moments_bruteforce
from .synth import GroundTruth, ProblemSpec, generate, init_state
from .vb_solver import Divergence, MissingOracle, NonPositiveDiagonal, solve, step, update_a, update_b

__version__ = "0.1.0"

__all__ = [
    "Alignment", "ConvergenceMode", "Dims", "Divergence", "EmptyMask", "ErrorReport",
    "FactorState", "GroundTruth", "Hyperparams", "IllConditioned", "MissingOracle", "Moments",
    "NonPositiveDiagonal", "NonPositiveParam", "NotPositiveDefinite", "Observation", "PriorB",
    "ProblemSpec", "QuadratureMethod", "QuadratureSpec", "Schedule", "ShapeMismatch",
    "SingularMatrix", "SolveOptions", "SolveReport", "SparseVBError", "ValidationError",
    "ZeroReference", "align", "compute_errors", "generate", "init_state", "load_bundle",
    "moments_bruteforce", "norm_dist", "save_bundle", "solve", "spd_inverse", "step",
    "update_a", "update_b", "validate",
]
