"""Higher-order leakage detection and fixing for masked Thumb assembly."""

from ._core import (
    ExecutionError,
    FormatError,
    LeakageModel,
    ParseError,
    Program,
    analyze,
    corrected_threshold,
    default_model,
    emulate,
    load_model,
    load_program,
    overhead_table,
    parse_program,
    run,
    welch_t,
)

__all__ = [
    "ExecutionError",
    "FormatError",
    "LeakageModel",
    "ParseError",
    "Program",
    "analyze",
    "corrected_threshold",
    "default_model",
    "emulate",
    "load_model",
    "load_program",
    "overhead_table",
    "parse_program",
    "run",
    "welch_t",
]
