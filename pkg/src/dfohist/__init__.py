"""Derivative-free trust-region optimisation of composite functions that
reuses a history of prior black-box evaluations."""
from .core import (
    L2,
    LINF,
    Bounds,
    BudgetExhausted,
    CompositeProblem,
    ConfigError,
    CountingOracle,
    InfeasiblePointError,
    OuterFunction,
    SolverConfig,
    make_rng,
    project_box,
)
from .driver import NO_HISTORY, WITH_HISTORY, SolverReport, ratio, run_mode, solve, write_report
from .surrogate import HistoryStore

__version__ = "0.1.0"

__all__ = [
    "L2",
    "LINF",
    "Bounds",
    "BudgetExhausted",
    "CompositeProblem",
    "ConfigError",
    "CountingOracle",
    "InfeasiblePointError",
    "OuterFunction",
    "SolverConfig",
    "make_rng",
    "project_box",
    "NO_HISTORY",
    "WITH_HISTORY",
    "SolverReport",
    "ratio",
    "run_mode",
    "solve",
    "write_report",
    "HistoryStore",
]
