"""Hardware configuration and DSP / BRAM resource estimation.

The model follows hls4ml's *Resource* strategy: a layer with ``n`` weights and
reuse factor ``RF`` instantiates ``BF = ceil(n / RF)`` multipliers, each fed
from ``RF`` consecutive words of the transposed weight vector. BRAM is 1K x 36
bits; ``C`` adjacent multipliers share one block. Multipliers narrower than
10 bits are mapped to LUTs and cost no DSP.

Estimates, not synthesis results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from hwprune.errors import ConfigError
from hwprune.nn.quant import FixedPointFormat

BRAM_WIDTH = 36
BRAM_DEPTH = 1024
LUT_MULT_BELOW = 10

STRATEGIES = ("Latency", "Resource")
GRANULARITIES = ("unstructured", "dsp_aware", "bram_aware")
RESOURCE_NAMES = ("dsp", "bram")


@dataclass(frozen=True)
class ResourceVector:
    dsp: int = 0
    bram: int = 0

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.dsp + other.dsp, self.bram + other.bram)

    def __le__(self, other: "ResourceVector") -> bool:
        # componentwise partial order
        return self.dsp <= other.dsp and self.bram <= other.bram

    def as_tuple(self) -> tuple[int, int]:
        return (self.dsp, self.bram)

    def to_dict(self) -> dict:
        return {"dsp": self.dsp, "bram": self.bram}

    @classmethod
    def from_iterable(cls, values) -> "ResourceVector":
        dsp, bram = (int(v) for v in values)
        return cls(dsp, bram)


def consecutive_groups(total_bits: int) -> int:
    """Number of adjacent DSP groups that must be pruned to free a BRAM block."""
    if not 2 <= total_bits <= BRAM_WIDTH:
        raise ConfigError(f"precision must be in [2, {BRAM_WIDTH}] bits, got {total_bits}")
    if BRAM_WIDTH % total_bits == 0:
        return BRAM_WIDTH // total_bits
    return math.ceil(2 * BRAM_WIDTH / total_bits)


def dsp_per_multiplier(total_bits: int) -> int:
    return 0 if total_bits < LUT_MULT_BELOW else 1


@dataclass(frozen=True)
class LayerHwConfig:
    reuse_factor: int = 1
    precision: FixedPointFormat = field(default_factory=lambda: FixedPointFormat(16, 6))
    strategy: str = "Resource"
    granularity: str = "dsp_aware"

    def __post_init__(self):
        if not isinstance(self.reuse_factor, int) or self.reuse_factor < 1:
            raise ConfigError(f"reuse factor must be a positive integer, got {self.reuse_factor!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if self.strategy == "Latency":
            if self.granularity != "unstructured":
                raise ConfigError("Latency strategy requires unstructured granularity")
            if self.reuse_factor != 1:
                raise ConfigError("Latency strategy maps one multiplier per weight; use RF=1")
        elif self.granularity == "unstructured":
            raise ConfigError(
                "unstructured granularity frees no multiplier under the Resource strategy"
            )

    @property
    def consecutive(self) -> int:
        return consecutive_groups(self.precision.total)

    @property
    def dsp_per_mult(self) -> int:
        return dsp_per_multiplier(self.precision.total)

    @property
    def words_spanned(self) -> int:
        """BRAM blocks stacked in depth to hold ``RF`` words per multiplier."""
        return math.ceil(self.reuse_factor / BRAM_DEPTH)

    def block_factor(self, n_weights: int) -> int:
        return math.ceil(n_weights / self.reuse_factor)

    def check_layer(self, n_weights: int, name: str = "?") -> None:
        if self.strategy == "Resource" and self.reuse_factor > n_weights:
            raise ConfigError(
                f"layer {name}: reuse factor {self.reuse_factor} exceeds its {n_weights} weights"
            )

    def to_dict(self) -> dict:
        return {
            "reuse_factor": self.reuse_factor,
            "precision": self.precision.to_dict(),
            "strategy": self.strategy,
            "granularity": self.granularity,
        }


_CFG_KEYS = {"name", "reuse_factor", "precision", "strategy", "granularity"}


def _cfg_fields(raw: dict, where: str) -> dict:
    unknown = set(raw) - _CFG_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    out = {}
    if "reuse_factor" in raw:
        out["reuse_factor"] = raw["reuse_factor"]
    if "precision" in raw:
        p = raw["precision"]
        try:
            out["precision"] = FixedPointFormat(int(p["total"]), int(p["integer"]))
        except (KeyError, TypeError):
            raise ConfigError(f"{where}: precision must be {{total, integer}}") from None
    for key in ("strategy", "granularity"):
        if key in raw:
            out[key] = raw[key]
    return out


@dataclass
class HardwareConfig:
    """Per-layer configuration with a global defaults section."""

    defaults: dict = field(default_factory=dict)
    layers: dict[str, LayerHwConfig] = field(default_factory=dict)

    def for_layer(self, name: str) -> LayerHwConfig:
        if name in self.layers:
            return self.layers[name]
        if not self.defaults:
            raise ConfigError(f"no hardware configuration for layer {name}")
        return LayerHwConfig(**self.defaults)

    def check_network(self, net) -> None:
        """Raise one :class:`ConfigError` listing every misconfigured layer."""
        problems = []
        for _, layer in net.trainable_layers():
            try:
                self.for_layer(layer.name).check_layer(layer.n_weights, layer.name)
            except ConfigError as exc:
                problems.append(str(exc))
        trainable = {layer.name for _, layer in net.trainable_layers()}
        for name in sorted(set(self.layers) - trainable):
            problems.append(f"configured layer {name} is not a trainable layer of the model")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def uniform(cls, **kwargs) -> "HardwareConfig":
        cfg = LayerHwConfig(**kwargs)
        return cls(defaults={f: getattr(cfg, f) for f in ("reuse_factor", "precision", "strategy", "granularity")})

    @classmethod
    def from_dict(cls, raw: dict) -> "HardwareConfig":
        if not isinstance(raw, dict):
            raise ConfigError("hardware config must be a JSON object")
        defaults = _cfg_fields(raw.get("defaults", {}), "defaults")
        if defaults:
            LayerHwConfig(**defaults)  # validate eagerly
        layers = {}
        for k, entry in enumerate(raw.get("layers", [])):
            if "name" not in entry:
                raise ConfigError(f"layers[{k}] has no name")
            merged = {**defaults, **_cfg_fields(entry, f"layers[{k}]")}
            layers[entry["name"]] = LayerHwConfig(**merged)
        return cls(defaults=defaults, layers=layers)

    def to_dict(self) -> dict:
        d: dict = {}
        if self.defaults:
            cfg = LayerHwConfig(**self.defaults)
            d["defaults"] = cfg.to_dict()
        d["layers"] = [{"name": n, **c.to_dict()} for n, c in self.layers.items()]
        return d


def group_resource(cfg: LayerHwConfig, n_chunks: int | None = None) -> ResourceVector:
    """Resources freed by pruning one structure of this layer.

    ``n_chunks`` is the number of real multipliers inside a BRAM-aware group;
    only the trailing group of a layer can hold fewer than ``C``.
    """
    d = cfg.dsp_per_mult
    if cfg.granularity == "bram_aware":
        chunks = cfg.consecutive if n_chunks is None else n_chunks
        return ResourceVector(chunks * d, cfg.words_spanned)
    return ResourceVector(d, 0)


def layer_baseline(layer, cfg: LayerHwConfig) -> ResourceVector:
    """Unpruned DSP / BRAM estimate of one trainable layer."""
    return estimate_layer(layer, cfg, mask=None)


def live_multipliers(mask_matrix: np.ndarray, reuse_factor: int) -> np.ndarray:
    """Boolean per multiplier: does it process at least one unpruned weight?

    ``mask_matrix`` is the ``(n_in, n_out)`` mask; the trailing chunk is
    zero-padded to a full ``RF``.
    """
    flat = np.asarray(mask_matrix, dtype=bool).T.ravel()
    bf = math.ceil(flat.size / reuse_factor)
    padded = np.zeros(bf * reuse_factor, dtype=bool)
    padded[: flat.size] = flat
    return padded.reshape(bf, reuse_factor).any(axis=1)


def estimate_layer(layer, cfg: LayerHwConfig, mask=None) -> ResourceVector:
    """DSP / BRAM estimate, optionally after pruning with ``mask``.

    A multiplier is saved only when all of its weights are pruned, and a BRAM
    block only when all ``C`` multipliers it feeds are saved.
    """
    n = layer.n_weights
    cfg.check_layer(n, layer.name)
    d = cfg.dsp_per_mult
    if mask is None:
        mask = np.ones(layer.weights.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if cfg.strategy == "Latency":
        # weights live in registers
        return ResourceVector(int(mask.sum()) * d, 0)
    live = live_multipliers(mask.reshape(layer.matrix_shape()), cfg.reuse_factor)
    c = cfg.consecutive
    n_blocks = math.ceil(live.size / c)
    padded = np.zeros(n_blocks * c, dtype=bool)
    padded[: live.size] = live
    live_blocks = int(padded.reshape(n_blocks, c).any(axis=1).sum())
    return ResourceVector(int(live.sum()) * d, live_blocks * cfg.words_spanned)


def estimate_network(net, hwcfg: HardwareConfig, use_mask: bool = True) -> dict[str, ResourceVector]:
    out = {}
    for _, layer in net.trainable_layers():
        cfg = hwcfg.for_layer(layer.name)
        mask = net.masks.get(layer.name) if use_mask else None
        out[layer.name] = estimate_layer(layer, cfg, mask)
    return out


def total(vectors) -> ResourceVector:
    acc = ResourceVector()
    for v in vectors:
        acc = acc + v
    return acc


def network_baseline(net, hwcfg: HardwareConfig) -> ResourceVector:
    """``R_B``: the summed resources of every prunable structure (mask ignored)."""
    from hwprune.structures import extract_groups

    acc = ResourceVector()
    for idx, layer in net.trainable_layers():
        for g in extract_groups(layer, hwcfg.for_layer(layer.name), layer_id=idx):
            acc = acc + g.resource
    return acc

