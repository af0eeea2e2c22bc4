"""Minimal numpy training and inference engine for dense / conv networks."""

from hwprune.nn.network import (
    Layer,
    Network,
    backward,
    col2im,
    forward,
    im2col,
    jet_mlp,
    mlp,
    small_cnn,
)
from hwprune.nn.quant import FixedPointFormat, quantize, quantize_network
from hwprune.nn.train import (
    AdamState,
    Regularizer,
    TrainConfig,
    adam_step,
    evaluate,
    fit,
    group_regularization,
    loss_and_grads,
    predict,
)

__all__ = [
    "AdamState",
    "FixedPointFormat",
    "Layer",
    "Network",
    "Regularizer",
    "TrainConfig",
    "adam_step",
    "backward",
    "col2im",
    "evaluate",
    "fit",
    "forward",
    "group_regularization",
    "im2col",
    "jet_mlp",
    "loss_and_grads",
    "mlp",
    "predict",
    "quantize",
    "quantize_network",
    "small_cnn",
]
