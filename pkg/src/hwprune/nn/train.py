"""Loss, group regularization, Adam and the training / evaluation loops."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hwprune.errors import NumericError, UsageError
from hwprune.nn.network import Network, forward, backward
from hwprune.nn.quant import FixedPointFormat, quantize_network


# --- group regularization ---------------------------------------------------


def group_ids(size: int, groups: Sequence[Sequence[int]]) -> np.ndarray:
    """Map each flat weight index to its group number (-1 when ungrouped)."""
    ids = np.full(size, -1, dtype=np.int64)
    for g, coords in enumerate(groups):
        ids[np.asarray(coords, dtype=np.int64)] = g
    return ids


def _group_lasso(w: np.ndarray, ids: np.ndarray, n_groups: int, lam: float):
    flat = w.ravel()
    grouped = ids >= 0
    sq = np.bincount(ids[grouped], weights=flat[grouped] ** 2, minlength=n_groups)
    norms = np.sqrt(sq)
    term = lam * float(norms.sum())
    inv = np.zeros_like(norms)
    nz = norms > 0
    inv[nz] = 1.0 / norms[nz]
    grad = np.zeros_like(flat)
    grad[grouped] = lam * flat[grouped] * inv[ids[grouped]]
    return term, grad.reshape(w.shape)


def group_regularization(weights, groups: Sequence[Sequence[int]], lam: float):
    """``lam * sum_g ||w_g||_2`` and its (sub)gradient.

    ``groups`` hold flat row-major indices into ``weights``. Zero-norm groups
    get the zero subgradient.
    """
    if lam < 0:
        raise UsageError(f"regularization strength must be >= 0, got {lam}")
    w = np.asarray(weights, dtype=np.float64)
    ids = group_ids(w.size, groups)
    return _group_lasso(w, ids, len(groups), lam)


@dataclass
class Regularizer:
    """Group-lasso penalty over hardware-mapped groups.

    ``groups`` maps a layer index to its groups, each a list of flat indices
    into that layer's weight tensor.
    """

    lam: float = 0.0
    groups: dict[int, list] = field(default_factory=dict)
    _ids: dict[int, np.ndarray] = field(default_factory=dict, init=False, repr=False)

    def ids(self, layer_index: int, size: int) -> np.ndarray:
        ids = self._ids.get(layer_index)
        if ids is None or ids.size != size:
            ids = group_ids(size, self.groups[layer_index])
            self._ids[layer_index] = ids
        return ids

    def term_and_grads(self, net: Network):
        total = 0.0
        grads = {}
        if self.lam == 0:
            return total, grads
        for idx, groups in self.groups.items():
            w = net.layers[idx].weights
            term, g = _group_lasso(w, self.ids(idx, w.size), len(groups), self.lam)
            total += term
            grads[idx] = g
        return total, grads


# --- loss -----------------------------------------------------------------


def _check_finite(net: Network, cache, out) -> None:
    values = list(cache[1:]) + [out]
    for idx, value in enumerate(values):
        if not np.all(np.isfinite(value)):
            layer = net.layers[idx]
            raise NumericError(f"non-finite activations after layer {layer.name}", layer=idx)


def loss_and_grads(net: Network, batch, labels, reg: Regularizer | None = None):
    """Mean cross-entropy plus regularization, and per-layer gradients.

    The network output is treated as logits, unless the final layer is a
    softmax, in which case it is treated as probabilities.
    Returns ``(loss, {layer_index: (grad_w, grad_b)})``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    # overflow is reported below, naming the layer
    with np.errstate(over="ignore", invalid="ignore"):
        out, cache = forward(net, batch, return_cache=True)
    n, k = out.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise UsageError(f"labels must be {n} class indices in [0, {k})")
    _check_finite(net, cache, out)
    rows = np.arange(n)
    if net.layers[-1].kind == "softmax":
        p = out[rows, labels]
        loss = float(-np.mean(np.log(np.maximum(p, 1e-300))))
        grad_out = np.zeros_like(out)
        grad_out[rows, labels] = -1.0 / (n * np.maximum(p, 1e-300))
    else:
        z = out - out.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(logsum - z[rows, labels]))
        grad_out = np.exp(z - logsum[:, None])
        grad_out[rows, labels] -= 1.0
        grad_out /= n
    grads = backward(net, cache, out, grad_out)
    if reg is not None:
        term, reg_grads = reg.term_and_grads(net)
        loss += term
        for idx, g in reg_grads.items():
            gw, gb = grads[idx]
            grads[idx] = (gw + g, gb)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", layer=len(net.layers) - 1)
    return loss, grads


# --- Adam -----------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """In-place bias-corrected Adam update of ``params`` (name -> array)."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for key, p in params.items():
        g = grads[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m, v = state.m[key], state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def _param_views(net: Network) -> dict:
    params = {}
    for idx, layer in net.trainable_layers():
        params[(idx, "w")] = layer.weights
        params[(idx, "b")] = layer.bias
    return params


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    lam: float = 1e-4
    seed: int = 0


def fit(
    net: Network,
    features,
    labels,
    cfg: TrainConfig,
    reg: Regularizer | None = None,
) -> list[float]:
    """Train ``net`` in place with Adam; masked weights stay exactly zero.

    Returns the mean training loss of every epoch.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) == 0:
        raise UsageError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    masks = {
        idx: net.masks[layer.name]
        for idx, layer in net.trainable_layers()
        if layer.name in net.masks
    }
    net.apply_masks()
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(net, x[sel], y[sel], reg)
            total += loss * len(sel)
            flat_grads = {}
            for idx, (gw, gb) in grads.items():
                if idx in masks:
                    gw = gw * masks[idx]
                flat_grads[(idx, "w")] = gw
                flat_grads[(idx, "b")] = gb
            adam_step(_param_views(net), flat_grads, state)
            # stale Adam moments could otherwise move pinned weights
            for idx, mask in masks.items():
                net.layers[idx].weights *= mask
        history.append(total / len(x))
    return history


def predict(net: Network, features, batch_size: int = 1024) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    preds = [forward(net, x[s : s + batch_size]).argmax(axis=1) for s in range(0, len(x), batch_size)]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(net: Network, dataset, fmt: FixedPointFormat | None = None) -> float:
    """Top-1 accuracy on ``dataset`` (anything with ``features``/``labels``)."""
    features, labels = dataset.features, np.asarray(dataset.labels)
    if len(labels) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    model = quantize_network(net, fmt) if fmt is not None else net
    return float(np.mean(predict(model, features) == labels))
