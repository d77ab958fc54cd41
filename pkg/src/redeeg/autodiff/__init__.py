"""Minimal reverse-mode autodiff with the layers RED needs."""
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (LayerShapeError, avg_pool, batch_norm, conv1d, conv2d,
                     cross_entropy, dense, dropout, lstm, max_pool, softmax)
from .optim import Adam, clip_global_norm, global_norm
from .tensor import Tensor, concat, crop, no_grad, relu, reshape, transpose

__all__ = [
    "Tensor", "no_grad", "relu", "reshape", "transpose", "concat", "crop",
    "conv1d", "conv2d", "batch_norm", "avg_pool", "max_pool", "dropout",
    "dense", "softmax", "cross_entropy", "lstm", "LayerShapeError",
    "Adam", "clip_global_norm", "global_norm",
    "save_checkpoint", "load_checkpoint",
]
