"""Post-training fixed-point quantization (round to nearest, saturate)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hwprune.errors import ConfigError


@dataclass(frozen=True)
class FixedPointFormat:
    """Signed ``ap_fixed<total, integer>``; ``integer`` includes the sign bit."""

    total: int
    integer: int

    def __post_init__(self):
        if not 2 <= self.total <= 36:
            raise ConfigError(f"total bits must be in [2, 36], got {self.total}")
        if not 1 <= self.integer <= self.total:
            raise ConfigError(
                f"integer bits must be in [1, {self.total}], got {self.integer}"
            )

    @property
    def step(self) -> float:
        return math.ldexp(1.0, -(self.total - self.integer))

    @property
    def min_value(self) -> float:
        return -math.ldexp(1.0, self.integer - 1)

    @property
    def max_value(self) -> float:
        return math.ldexp(1.0, self.integer - 1) - self.step

    @classmethod
    def parse(cls, text: str) -> "FixedPointFormat":
        """Parse ``"18,6"`` into a format."""
        try:
            total, integer = (int(t) for t in text.split(","))
        except ValueError:
            raise ConfigError(f"expected 'TOTAL,INTEGER', got {text!r}") from None
        return cls(total, integer)

    def to_dict(self) -> dict:
        return {"total": self.total, "integer": self.integer}


def quantize(x, fmt: FixedPointFormat) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    q = np.rint(x / fmt.step) * fmt.step
    q = np.clip(q, fmt.min_value, fmt.max_value)
    # rint(-0.0) yields -0.0; keep zeros canonical
    q[q == 0] = 0.0
    return q


def quantize_network(net, fmt: FixedPointFormat):
    """Return a copy of ``net`` with every weight and bias quantized to ``fmt``."""
    out = net.copy()
    for layer in out.layers:
        if layer.trainable:
            layer.weights = quantize(layer.weights, fmt)
            layer.bias = quantize(layer.bias, fmt)
    return out
