"""Sparse HLS-style kernel emission and an interpreter for its schedule.

A Resource-strategy layer is a pipelined loop over ``RF`` cycles around an
unrolled region of ``BF`` multipliers; multiplier ``j`` reads transposed
weight ``i + j*RF`` in cycle ``i``. Multipliers whose whole weight chunk is
pruned are dropped from the emitted source.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from hwprune.errors import ConfigError, DimensionError
from hwprune.hw import LayerHwConfig


@dataclass(frozen=True)
class Slot:
    cycle: int
    weight_index: int  # into the transposed-flattened weight vector
    input_index: int
    output_index: int
    live: bool  # the owning multiplier survives pruning
    masked: bool  # this weight itself is pruned


@dataclass
class LayerSchedule:
    name: str
    n_in: int
    n_out: int
    reuse_factor: int
    block_factor: int
    instances: list[list[Slot]] = field(default_factory=list)

    def live_instances(self) -> list[int]:
        return [j for j, slots in enumerate(self.instances) if slots and slots[0].live]

    def partial_instances(self) -> list[int]:
        """Live multipliers that still process some pruned weights."""
        return [
            j
            for j in self.live_instances()
            if any(s.masked for s in self.instances[j])
        ]

    def to_dict(self) -> dict:
        return {
            "layer": self.name,
            "n_in": self.n_in,
            "n_out": self.n_out,
            "reuse_factor": self.reuse_factor,
            "block_factor": self.block_factor,
            "instances": [
                {
                    "index": j,
                    "live": bool(slots and slots[0].live),
                    "slots": [
                        [s.cycle, s.weight_index, s.input_index, s.output_index, int(s.masked)]
                        for s in slots
                    ],
                }
                for j, slots in enumerate(self.instances)
            ],
        }


def _matrix_mask(layer, mask) -> np.ndarray:
    shape = layer.matrix_shape()
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.size != shape[0] * shape[1]:
        raise DimensionError(f"layer {layer.name}: mask size {mask.size} != {shape[0] * shape[1]}")
    return mask.reshape(shape)


def build_schedule(layer, cfg: LayerHwConfig, mask=None) -> LayerSchedule:
    """Index trace of the Resource kernel with per-multiplier liveness.

    The input / output indices of weight ``k`` are ``k % n_in`` and
    ``k // n_in``, which is what the kernel's wrapping ``in_index`` and
    ``acc_step`` counters compute whenever ``RF`` divides ``n_in``.
    """
    if cfg.strategy != "Resource":
        raise ConfigError(f"layer {layer.name}: schedules exist only for the Resource strategy")
    n_in, n_out = layer.matrix_shape()
    n = n_in * n_out
    cfg.check_layer(n, layer.name)
    rf = cfg.reuse_factor
    bf = math.ceil(n / rf)
    unmasked = _matrix_mask(layer, mask).T.ravel()
    instances = []
    for j in range(bf):
        ws = range(j * rf, min((j + 1) * rf, n))
        live = bool(unmasked[j * rf : (j + 1) * rf].any())
        instances.append(
            [Slot(w - j * rf, w, w % n_in, w // n_in, live, not bool(unmasked[w])) for w in ws]
        )
    return LayerSchedule(layer.name, n_in, n_out, rf, bf, instances)


def alg1_recurrence(n_in: int, n_out: int, reuse_factor: int) -> list[tuple[int, int, int, int, int]]:
    """Literal counter arithmetic of the hls4ml Resource kernel.

    Yields ``(cycle, multiplier, w_index, in_index, out_index)`` for every
    in-range product. Only meaningful when ``reuse_factor`` divides ``n_in``.
    """
    n = n_in * n_out
    bf = math.ceil(n / reuse_factor)
    mult_scale = bf // n_out
    out = []
    for i in range(reuse_factor):
        w_index, in_index, out_index, acc_step = i, i, 0, 0
        for j in range(bf):
            if w_index < n:
                out.append((i, j, w_index, in_index, out_index))
            w_index += reuse_factor
            in_index += reuse_factor
            if in_index >= n_in:
                in_index = i
            if acc_step + 1 >= mult_scale:
                acc_step = 0
                out_index += 1
            else:
                acc_step += 1
    return out


def interpret(schedule: LayerSchedule, weights, inputs) -> np.ndarray:
    """Execute the schedule: ``out[o] += w[k] * x[i]`` over live, unpruned slots.

    ``weights`` is the ``(n_in, n_out)`` matrix; bias is not applied.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size != schedule.n_in * schedule.n_out:
        raise DimensionError(f"expected {schedule.n_in * schedule.n_out} weights, got {w.size}")
    x = np.asarray(inputs, dtype=np.float64).reshape(-1)
    if x.size != schedule.n_in:
        raise DimensionError(f"expected {schedule.n_in} inputs, got {x.size}")
    wt = w.reshape(schedule.n_in, schedule.n_out).T.ravel()
    out = np.zeros(schedule.n_out)
    for slots in schedule.instances:
        for s in slots:
            if s.live and not s.masked:
                out[s.output_index] += wt[s.weight_index] * x[s.input_index]
    return out


# --- source emission ------------------------------------------------------

MAC_PATTERN = re.compile(r"^\s*(?:if \(.*\) )?acc\[.*\] \+= .* \* data\[.*\];")


def _literal(value: float) -> str:
    return repr(float(value))


def _ident(name: str) -> str:
    return re.sub(r"\W", "_", name)


def count_mac_statements(source: str) -> int:
    return sum(1 for line in source.splitlines() if MAC_PATTERN.match(line))


def _header(layer, cfg: LayerHwConfig, n_in: int, n_out: int) -> list[str]:
    p = cfg.precision
    return [
        f"// layer {layer.name} ({layer.kind}), strategy {cfg.strategy}",
        f"// n_in={n_in} n_out={n_out} reuse_factor={cfg.reuse_factor} precision=ap_fixed<{p.total},{p.integer}>",
        f"typedef ap_fixed<{p.total},{p.integer}> {_ident(layer.name)}_weight_t;",
        "",
    ]


def _bias_block(layer, ident: str, n_out: int) -> list[str]:
    bias = ", ".join(_literal(b) for b in layer.bias)
    return [
        f"static const {ident}_weight_t b_{ident}[{n_out}] = {{{bias}}};",
        "",
    ]


def emit_source(layer, cfg: LayerHwConfig, mask=None) -> str:
    """C++-flavoured HLS text for one layer, pruned multipliers elided.

    Conv layers are emitted as their im2col kernel product: ``data`` is one
    flattened ``(kh, kw, c_in)`` patch and ``acc`` one output pixel.
    """
    n_in, n_out = layer.matrix_shape()
    ident = _ident(layer.name)
    m = _matrix_mask(layer, mask)
    w = np.where(m, layer.weight_matrix(), 0.0)
    lines = _header(layer, cfg, n_in, n_out)
    lines += _bias_block(layer, ident, n_out)
    if cfg.strategy == "Latency":
        lines += [
            f"void {layer.kind}_{ident}(const data_t data[{n_in}], accum_t acc[{n_out}]) {{",
            "    #pragma HLS PIPELINE II=1",
            f"    for (int o = 0; o < {n_out}; o++) {{",
            "        #pragma HLS UNROLL",
            f"        acc[o] = b_{ident}[o];",
            "    }",
        ]
        n_live = 0
        for o in range(n_out):
            for i in range(n_in):
                if m[i, o]:
                    n_live += 1
                    lines.append(
                        f"    acc[{o}] += ({ident}_weight_t){_literal(w[i, o])} * data[{i}];"
                    )
        lines.append("}")
        lines.insert(2, f"// multipliers: {n_live} of {n_in * n_out} (unstructured)")
        return "\n".join(lines) + "\n"

    sched = build_schedule(layer, cfg, mask)
    rf, bf = sched.reuse_factor, sched.block_factor
    wt = w.T.ravel()
    live = sched.live_instances()
    partial = set(sched.partial_instances())
    lines.insert(
        2,
        f"// block_factor={bf} live_multipliers={len(live)} pruned_multipliers={bf - len(live)}"
        f" partial_no_dsp_saving={len(partial)}",
    )
    for j in live:
        slots = sched.instances[j]
        vals = ", ".join("0" if s.masked else _literal(wt[s.weight_index]) for s in slots)
        lines.append(f"static const {ident}_weight_t w_{ident}_m{j}[{len(slots)}] = {{{vals}}};")
    lines += [
        "",
        f"void {layer.kind}_{ident}(const data_t data[{n_in}], accum_t acc[{n_out}]) {{",
        f"    for (int o = 0; o < {n_out}; o++) {{",
        "        #pragma HLS UNROLL",
        f"        acc[o] = b_{ident}[o];",
        "    }",
        f"    for (int i = 0; i < {rf}; i++) {{",
        "        #pragma HLS PIPELINE II=1",
        "        // unrolled region: one multiplier per statement",
    ]
    for j in live:
        slots = sched.instances[j]
        base = j * rf
        stmt = f"acc[(i + {base}) / {n_in}] += w_{ident}_m{j}[i] * data[(i + {base}) % {n_in}];"
        if j in partial:
            stmt += "  // partially pruned: no DSP saving"
        if len(slots) < rf:
            stmt = f"if (i < {len(slots)}) " + stmt
        lines.append("        " + stmt)
    lines += ["    }", "}"]
    return "\n".join(lines) + "\n"
