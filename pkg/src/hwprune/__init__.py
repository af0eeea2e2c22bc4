"""Resource-aware structured pruning for hls4ml-style FPGA inference."""

from hwprune.errors import (
    ConfigError,
    DimensionError,
    FormatError,
    HwPruneError,
    NumericError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "FormatError",
    "HwPruneError",
    "NumericError",
    "UsageError",
]
