"""PERIDOT permutation codes: construction, verification, simulation and
backend identification of transmitters from code numbers (CNs)."""

from .errors import (
    BackpressureError,
    DomainError,
    NotFoundError,
    ParameterError,
    PeridotError,
    StateError,
    ValidationError,
)
from .perm import IncrementPermutation, Permutation, TablePermutation
from .proper import ProperSet, exhaustive_max_search, upper_bound, verify_proper
from .construction import construct, plan_parameters, recover_beta

__version__ = "0.1.0"

__all__ = [
    "BackpressureError",
    "DomainError",
    "IncrementPermutation",
    "NotFoundError",
    "ParameterError",
    "Permutation",
    "PeridotError",
    "ProperSet",
    "StateError",
    "TablePermutation",
    "ValidationError",
    "construct",
    "exhaustive_max_search",
    "plan_parameters",
    "recover_beta",
    "upper_bound",
    "verify_proper",
]
