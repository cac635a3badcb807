"""Truncated variational EM for generative models with discrete latents."""

from .errors import (
    BudgetExceededError,
    ConfigError,
    DegenerateModelError,
    DegenerateSetError,
    InsufficientDataError,
    InvalidInputError,
    InvalidParamsError,
    MonotonicityViolation,
    PoolTooLargeError,
    SingularSystemError,
    SpaceTooLargeError,
    TvemError,
    UnsupportedSpaceError,
)
from .estep import (
    EStepConfig,
    construct_sparse,
    exhaustive_estep,
    merge_top_s,
    mixture_full_estep,
    replace_if_better,
    run_estep,
    select_relevant,
    suggest_blind,
    suggest_perturb,
    suggest_prior,
)
from .models import (
    BinarySparseCoding,
    BscParams,
    GaussianMixture,
    GmmParams,
    PoissonMixParams,
    PoissonMixture,
    log_joint,
    make_model,
)
from .posterior import (
    VariationalCollection,
    general_free_energy,
    generalized_free_energy,
    simplified_free_energy,
    truncated_expectation,
    truncated_weights,
)
from .states import StateSpace, enumerate_states
from .trainer import FreeEnergyTrace, TrainerConfig, train, tvem_iteration

__version__ = "0.1.0"

__all__ = [
    "BinarySparseCoding",
    "BscParams",
    "BudgetExceededError",
    "ConfigError",
    "DegenerateModelError",
    "DegenerateSetError",
    "EStepConfig",
    "FreeEnergyTrace",
    "GaussianMixture",
    "GmmParams",
    "InsufficientDataError",
    "InvalidInputError",
    "InvalidParamsError",
    "MonotonicityViolation",
    "PoissonMixParams",
    "PoissonMixture",
    "PoolTooLargeError",
    "SingularSystemError",
    "SpaceTooLargeError",
    "StateSpace",
    "TrainerConfig",
    "TvemError",
    "UnsupportedSpaceError",
    "VariationalCollection",
    "construct_sparse",
    "enumerate_states",
    "exhaustive_estep",
    "general_free_energy",
    "generalized_free_energy",
    "log_joint",
    "make_model",
    "merge_top_s",
    "mixture_full_estep",
    "replace_if_better",
    "run_estep",
    "select_relevant",
    "simplified_free_energy",
    "suggest_blind",
    "suggest_perturb",
    "suggest_prior",
    "train",
    "truncated_expectation",
    "truncated_weights",
    "tvem_iteration",
]
