"""Resource-aware weight groups.

Group coordinates index the *transposed-flattened* weight vector, the order
in which the Resource-strategy kernel streams weights out of BRAM: entry ``k``
of that vector is ``W[k % n_in, k // n_in]``.
"""

from __future__ import annotations

import math
from itertools import repeat
from dataclasses import dataclass

import numpy as np

from hwprune.errors import DimensionError
from hwprune.hw import LayerHwConfig, ResourceVector, group_resource


@dataclass(slots=True)
class ResourceGroup:
    layer_id: int
    group_index: int
    weight_coords: np.ndarray
    resource: ResourceVector
    layer_name: str = ""
    norm: float = 0.0

    def to_dict(self) -> dict:
        return {
            "layer": self.layer_name or self.layer_id,
            "index": self.group_index,
            "coords": [int(c) for c in self.weight_coords],
            "resource": self.resource.to_dict(),
        }


def transpose_flatten(w) -> np.ndarray:
    w = np.asarray(w)
    if w.ndim != 2:
        raise DimensionError(f"expected a 2-D weight matrix, got shape {w.shape}")
    return w.T.ravel()


def untranspose_flatten(vec, n_in: int, n_out: int) -> np.ndarray:
    """Inverse of :func:`transpose_flatten`."""
    return np.asarray(vec).reshape(n_out, n_in).T


def to_weight_index(coords, n_in: int, n_out: int) -> np.ndarray:
    """Transposed-flat coordinates -> row-major flat indices of the weight matrix."""
    coords = np.asarray(coords, dtype=np.int64)
    return (coords % n_in) * n_out + coords // n_in


def extract_groups(layer, cfg: LayerHwConfig, layer_id: int = 0) -> list[ResourceGroup]:
    """Consecutive runs of the transposed-flattened weight vector.

    One run per weight (unstructured), per multiplier (``RF`` words) or per
    BRAM block (``C`` multipliers). Coordinates are read-only views of one
    shared index array.
    """
    n_in, n_out = layer.matrix_shape()
    n = n_in * n_out
    cfg.check_layer(n, layer.name)
    if cfg.granularity == "unstructured":
        span = 1
    elif cfg.granularity == "bram_aware":
        span = cfg.reuse_factor * cfg.consecutive
    else:
        span = cfg.reuse_factor
    base = np.arange(n, dtype=np.int64)
    base.flags.writeable = False
    full = n // span
    coords = list(base[: full * span].reshape(full, span))
    if n % span:
        coords.append(base[full * span :])
    k = len(coords)
    groups = list(
        map(ResourceGroup, repeat(layer_id, k), range(k), coords, repeat(group_resource(cfg), k), repeat(layer.name, k))
    )
    if cfg.granularity == "bram_aware" and n % span:
        # the trailing block feeds fewer than C multipliers
        tail = cfg.block_factor(n) - (len(groups) - 1) * cfg.consecutive
        groups[-1].resource = group_resource(cfg, tail)
    return groups


def network_groups(net, hwcfg) -> list[ResourceGroup]:
    groups = []
    for idx, layer in net.trainable_layers():
        groups.extend(extract_groups(layer, hwcfg.for_layer(layer.name), layer_id=idx))
    return groups


def regularization_groups(net, groups: list[ResourceGroup]) -> dict[int, list[np.ndarray]]:
    """Group coordinates as flat indices into each layer's weight tensor."""
    out: dict[int, list[np.ndarray]] = {}
    for g in groups:
        n_in, n_out = net.layers[g.layer_id].matrix_shape()
        out.setdefault(g.layer_id, []).append(to_weight_index(g.weight_coords, n_in, n_out))
    return out


def alg1_trace_matrix(n_in: int, n_out: int, reuse_factor: int) -> np.ndarray:
    """``(BF, RF)`` table of the flat index multiplier ``j`` reads in cycle ``i``.

    Steps the kernel's recurrence (``w_index`` starts at ``i`` each cycle and
    advances by ``RF`` per unrolled multiplier), iterating along the shorter
    of the two loops and vectorizing the other. Reads beyond
    ``n_in * n_out`` (the zero padding) are -1.
    """
    n = n_in * n_out
    rf = reuse_factor
    bf = math.ceil(n / rf)
    table = np.empty((bf, rf), dtype=np.int64)
    if rf <= bf:
        steps = np.full(bf, rf, dtype=np.int64)
        for i in range(rf):
            # one cycle: w_index = i, i + RF, i + 2 RF, ... across multipliers
            steps[0] = i
            np.cumsum(steps, out=table[:, i])
    else:
        w_index = np.arange(rf, dtype=np.int64)  # value at j = 0 for every cycle
        for j in range(bf):
            table[j] = w_index
            w_index += rf
    table[table >= n] = -1
    return table


def alg1_trace(n_in: int, n_out: int, reuse_factor: int) -> dict[int, list[int]]:
    """Per multiplier, the sorted flat indices it reads over all cycles."""
    table = alg1_trace_matrix(n_in, n_out, reuse_factor)
    return {j: sorted(int(w) for w in row if w >= 0) for j, row in enumerate(table)}
