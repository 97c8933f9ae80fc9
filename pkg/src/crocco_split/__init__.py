"""Viscous-splitting solver for the Crocco-transformed Prandtl system with
special structure (u, ku, w), plus checks of its a-priori estimates."""
from .config import config_from_dict, parse_config
from .driver import RunConfig, SolutionHistory, refine_study, run, verify_history
from .errors import (
    ConfigError,
    CroccoSplitError,
    DataError,
    GeometryError,
    InvariantViolation,
    PositivityError,
    SolverError,
    VerificationFailure,
)
from .scenarios import PRESETS, list_presets, load_preset

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CroccoSplitError", "DataError", "GeometryError", "InvariantViolation",
    "PositivityError", "PRESETS", "RunConfig", "SolutionHistory", "SolverError",
    "VerificationFailure", "config_from_dict", "list_presets", "load_preset", "parse_config",
    "refine_study", "run", "verify_history",
]
