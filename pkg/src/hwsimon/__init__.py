"""Simulation and analysis toolkit for the weight-restricted Simon guessing game."""

from __future__ import annotations

from .errors import (
    BoundInapplicableError,
    DataError,
    InconsistentError,
    InvalidSequenceError,
    NumericalError,
    RejectedGuessError,
    ResourceError,
    SimonError,
    UnsupportedStructureError,
    UsageError,
)
from .gf2 import (
    BitString,
    CandidateSet,
    Undetermined,
    count_candidates,
    dot_mod2,
    enumerate_candidates,
    hamming_weight,
    solve_unique,
)

__version__ = "0.1.0"
