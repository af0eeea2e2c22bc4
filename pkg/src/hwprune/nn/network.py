"""Layers, networks and the forward/backward passes.

Activations are ``(batch, features)`` for dense layers and ``(batch, H, W, C)``
for conv layers. A dense layer that follows a conv layer flattens its input
in row-major (H, W, C) order.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hwprune.errors import DimensionError, UsageError

LAYER_KINDS = ("dense", "conv2d", "relu", "softmax")
TRAINABLE_KINDS = ("dense", "conv2d")


@dataclass
class Layer:
    kind: str
    name: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise UsageError(f"unknown layer kind {self.kind!r}")
        if self.trainable:
            if self.weights is None or self.bias is None:
                raise DimensionError(f"layer {self.name}: missing weights or bias")
            self.weights = np.asarray(self.weights, dtype=np.float64)
            self.bias = np.asarray(self.bias, dtype=np.float64)
            expected_ndim = 2 if self.kind == "dense" else 4
            if self.weights.ndim != expected_ndim:
                raise DimensionError(
                    f"layer {self.name}: {self.kind} weights must be "
                    f"{expected_ndim}-D, got shape {self.weights.shape}"
                )
            if self.bias.shape != (self.weights.shape[-1],):
                raise DimensionError(
                    f"layer {self.name}: bias shape {self.bias.shape} does not "
                    f"match {self.weights.shape[-1]} outputs"
                )

    @property
    def trainable(self) -> bool:
        return self.kind in TRAINABLE_KINDS

    @property
    def n_weights(self) -> int:
        return 0 if self.weights is None else int(self.weights.size)

    @property
    def n_params(self) -> int:
        return 0 if not self.trainable else int(self.weights.size + self.bias.size)

    def matrix_shape(self) -> tuple[int, int]:
        """``(n_in, n_out)`` of the weight matrix; conv kernels use im2col rows."""
        if not self.trainable:
            raise UsageError(f"layer {self.name} has no weights")
        if self.kind == "dense":
            return self.weights.shape
        kh, kw, c_in, c_out = self.weights.shape
        return kh * kw * c_in, c_out

    def weight_matrix(self) -> np.ndarray:
        return self.weights.reshape(self.matrix_shape())


@dataclass
class Network:
    layers: list[Layer]
    input_shape: tuple[int, ...]
    rng_seed: int = 0
    # layer name -> boolean array congruent to that layer's weights; missing means unmasked
    masks: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if not any(layer.trainable for layer in self.layers):
            raise UsageError("network needs at least one trainable layer")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise UsageError(f"duplicate layer names in {names}")
        self.output_shape()

    def trainable_layers(self) -> list[tuple[int, Layer]]:
        return [(i, layer) for i, layer in enumerate(self.layers) if layer.trainable]

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def mask_for(self, name: str) -> np.ndarray:
        layer = self.layer(name)
        mask = self.masks.get(name)
        if mask is None:
            return np.ones(layer.weights.shape, dtype=bool)
        return mask

    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def apply_masks(self) -> None:
        for name, mask in self.masks.items():
            layer = self.layer(name)
            layer.weights = np.where(mask, layer.weights, 0.0)

    def output_shape(self) -> tuple[int, ...]:
        shape = self.input_shape
        for layer in self.layers:
            shape = _layer_output_shape(layer, shape)
        return shape


def _layer_output_shape(layer: Layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if layer.kind == "dense":
        n_in = int(np.prod(shape))
        if layer.weights.shape[0] != n_in:
            raise DimensionError(
                f"layer {layer.name}: expects {layer.weights.shape[0]} inputs, "
                f"previous output has {n_in}"
            )
        return (layer.weights.shape[1],)
    if layer.kind == "conv2d":
        kh, kw, c_in, c_out = layer.weights.shape
        if len(shape) != 3 or shape[2] != c_in:
            raise DimensionError(
                f"layer {layer.name}: expects (H, W, {c_in}) input, got {shape}"
            )
        h, w = shape[0] - kh + 1, shape[1] - kw + 1
        if h < 1 or w < 1:
            raise DimensionError(f"layer {layer.name}: kernel larger than input {shape}")
        return (h, w, c_out)
    return shape


# --- im2col ---------------------------------------------------------------


def im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """``(N, H, W, C)`` -> ``(N, Ho, Wo, kh*kw*C)`` patches, (kh, kw, C) row-major."""
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # N, Ho, Wo, C, kh, kw
    win = win.transpose(0, 1, 2, 4, 5, 3)
    n, ho, wo = win.shape[:3]
    return win.reshape(n, ho, wo, kh * kw * x.shape[3])


def col2im(cols: np.ndarray, input_shape: tuple[int, ...], kh: int, kw: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to the input."""
    n, h, w, c = input_shape
    ho, wo = h - kh + 1, w - kw + 1
    cols = cols.reshape(n, ho, wo, kh, kw, c)
    out = np.zeros(input_shape, dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, a : a + ho, b : b + wo, :] += cols[:, :, :, a, b, :]
    return out


# --- forward / backward ---------------------------------------------------


def _check_batch(net: Network, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[1:] != net.input_shape:
        # flat dense inputs may arrive as (N, F) for an (F,) network
        if batch.ndim >= 2 and int(np.prod(batch.shape[1:])) == int(np.prod(net.input_shape)):
            return batch.reshape((batch.shape[0],) + net.input_shape)
        raise DimensionError(
            f"batch shape {batch.shape[1:]} does not match network input {net.input_shape}"
        )
    return batch


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: Network, batch, return_cache: bool = False):
    """Run the network; returns ``(batch, classes)`` outputs.

    With ``return_cache`` also returns per-layer inputs for :func:`backward`.
    """
    x = _check_batch(net, batch)
    cache = []
    for layer in net.layers:
        cache.append(x)
        if layer.kind == "dense":
            x = x.reshape(x.shape[0], -1) @ layer.weights + layer.bias
        elif layer.kind == "conv2d":
            kh, kw, c_in, c_out = layer.weights.shape
            cols = im2col(x, kh, kw)
            x = cols @ layer.weight_matrix() + layer.bias
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        else:
            x = _softmax(x)
    if return_cache:
        return x, cache
    return x


def backward(net: Network, cache: list[np.ndarray], out: np.ndarray, grad_out: np.ndarray):
    """Backpropagate ``grad_out`` (d loss / d output).

    Returns ``{layer_index: (grad_weights, grad_bias)}``.
    """
    grads = {}
    g = grad_out
    y = out
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        x = cache[idx]
        if layer.kind == "dense":
            x2 = x.reshape(x.shape[0], -1)
            grads[idx] = (x2.T @ g, g.sum(axis=0))
            g = (g @ layer.weights.T).reshape(x.shape)
        elif layer.kind == "conv2d":
            kh, kw, c_in, c_out = layer.weights.shape
            cols = im2col(x, kh, kw)
            flat_cols = cols.reshape(-1, cols.shape[-1])
            flat_g = g.reshape(-1, c_out)
            gw = (flat_cols.T @ flat_g).reshape(layer.weights.shape)
            grads[idx] = (gw, flat_g.sum(axis=0))
            gcols = g @ layer.weight_matrix().T
            g = col2im(gcols, x.shape, kh, kw)
        elif layer.kind == "relu":
            g = g * (x > 0)
        else:
            g = y * (g - (g * y).sum(axis=-1, keepdims=True))
        y = x
    return grads


# --- builders -------------------------------------------------------------


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def mlp(sizes: list[int], seed: int = 0, softmax: bool = False) -> Network:
    """Dense network with ReLU between layers, e.g. ``[16, 64, 32, 32, 5]``."""
    if len(sizes) < 2:
        raise UsageError("mlp needs at least input and output sizes")
    rng = np.random.default_rng(seed)
    layers = []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(
            Layer(
                "dense",
                f"fc{k + 1}",
                _glorot(rng, n_in, n_out, (n_in, n_out)),
                np.zeros(n_out),
            )
        )
        if k < len(sizes) - 2:
            layers.append(Layer("relu", f"relu{k + 1}"))
    if softmax:
        layers.append(Layer("softmax", "softmax"))
    return Network(layers, (sizes[0],), rng_seed=seed)


def jet_mlp(seed: int = 0) -> Network:
    """The 16-64-32-32-5 jet-tagging MLP (4,389 parameters)."""
    return mlp([16, 64, 32, 32, 5], seed=seed)


def small_cnn(
    input_shape: tuple[int, int, int] = (12, 12, 1),
    channels: tuple[int, ...] = (4, 8),
    hidden: tuple[int, ...] = (32,),
    n_classes: int = 10,
    kernel: int = 3,
    seed: int = 0,
) -> Network:
    """Reduced LeNet-like CNN: 3x3 valid convs with ReLU, then dense layers."""
    rng = np.random.default_rng(seed)
    layers = []
    h, w, c = input_shape
    for k, c_out in enumerate(channels):
        fan_in = kernel * kernel * c
        layers.append(
            Layer(
                "conv2d",
                f"conv2d_{k + 1}",
                _glorot(rng, fan_in, kernel * kernel * c_out, (kernel, kernel, c, c_out)),
                np.zeros(c_out),
            )
        )
        layers.append(Layer("relu", f"relu_c{k + 1}"))
        h, w, c = h - kernel + 1, w - kernel + 1, c_out
    n_in = h * w * c
    for k, n_out in enumerate(tuple(hidden) + (n_classes,)):
        layers.append(
            Layer("dense", f"fc_{k + 1}", _glorot(rng, n_in, n_out, (n_in, n_out)), np.zeros(n_out))
        )
        if k < len(hidden):
            layers.append(Layer("relu", f"relu_f{k + 1}"))
        n_in = n_out
    return Network(layers, input_shape, rng_seed=seed)
