"""Game (Israeli) option pricing on discrete Merton jump-diffusion lattices."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    EnumerationCapExceeded,
    ExactCapExceeded,
    GridOverflow,
    InsufficientRows,
    MalformedLattice,
    StepTooCoarse,
)
from .model import JumpLaw, MertonParams, StepParams, mean_jump, one_step_mean_factor, step_params
from .payoff import PayoffSpec
from .dynkin import DPResult, FilteredLattice, solve, value, extract_strategies
from .lattice import QuantGrid, build_exact, build_quantized, build_lattice, make_quant_grid

__all__ = [
    "ConfigError",
    "DPResult",
    "EnumerationCapExceeded",
    "ExactCapExceeded",
    "FilteredLattice",
    "GridOverflow",
    "InsufficientRows",
    "JumpLaw",
    "MalformedLattice",
    "MertonParams",
    "PayoffSpec",
    "QuantGrid",
    "StepParams",
    "StepTooCoarse",
    "build_exact",
    "build_lattice",
    "build_quantized",
    "extract_strategies",
    "make_quant_grid",
    "mean_jump",
    "one_step_mean_factor",
    "solve",
    "step_params",
    "value",
]
