"""Triadic process on random 3-uniform hypergraphs."""

from .exceptions import (
    AbortNearSingularity,
    ConfigMismatch,
    HorizonTooLate,
    IllegalEdge,
    InvalidInstance,
    InvalidPair,
    InvalidProbability,
    NoRoot,
    NotPropagated,
    PhaseError,
    RefusedScale,
    Stalled,
    TriadicError,
)
from .process import (
    GraphState,
    OpenTriple,
    OutcomeOracle,
    ProcessState,
    apply_edge,
    brute_force_open_set,
    init_process,
    run_phase1,
    run_phase2,
    run_round,
    step,
)

__version__ = "0.1.0"
