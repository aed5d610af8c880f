"""Stochastic calculus and backward stochastic dynamic equations on time scales."""
from .timescale import (
    AdmissibilityError,
    DomainError,
    GridScale,
    TimeScale,
    TimeScaleParseError,
    nabla_integral,
    partition,
)
from .stochastic import (
    MartingalePath,
    PathEnsemble,
    doleans_exponential,
    optional_sampling_check,
    quadratic_variation,
    sample_bm,
    stochastic_integral,
)
from .condexp import EngineConfig, LsmcEngine, QuadratureEngine
from .decomposition import Decomposition, decompose, orthogonality_check
from .bsde import (
    BsdeSolution,
    Driver,
    StepSizeError,
    TerminalCondition,
    apriori_check,
    beta_norm,
    free_driver_solve,
    lemma43_solve,
    picard_solve,
    solve_backward,
)

__version__ = "0.1.0"

__all__ = [
    "EngineConfig",
    "LsmcEngine",
    "QuadratureEngine",
    "Decomposition",
    "decompose",
    "orthogonality_check",
    "AdmissibilityError",
    "DomainError",
    "GridScale",
    "TimeScale",
    "TimeScaleParseError",
    "nabla_integral",
    "partition",
    "MartingalePath",
    "PathEnsemble",
    "doleans_exponential",
    "optional_sampling_check",
    "quadratic_variation",
    "sample_bm",
    "stochastic_integral",
    "BsdeSolution",
    "Driver",
    "StepSizeError",
    "TerminalCondition",
    "apriori_check",
    "beta_norm",
    "free_driver_solve",
    "lemma43_solve",
    "picard_solve",
    "solve_backward",
]
