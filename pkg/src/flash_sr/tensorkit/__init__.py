"""Minimal reverse-mode autodiff engine on numpy float64 arrays."""

from .tensor import Tensor, no_grad, grad_enabled, concat
from .kernels import (
    PAD_ZEROS,
    PAD_CIRCULAR_H,
    linear,
    conv2d,
    softmax,
    sigmoid,
    relu,
    gelu,
    layer_norm,
    dropout,
)
from .fft import ComplexGrid, fft2d, ifft2d, complex_magnitude
from .rng import generator_for, trunc_normal
from .params import ParamStore
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError
from .gradcheck import (
    numeric_gradient,
    max_relative_error,
    check_gradients,
    check_directional,
)

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "concat",
    "PAD_ZEROS",
    "PAD_CIRCULAR_H",
    "linear",
    "conv2d",
    "softmax",
    "sigmoid",
    "relu",
    "gelu",
    "layer_norm",
    "dropout",
    "ComplexGrid",
    "fft2d",
    "ifft2d",
    "complex_magnitude",
    "generator_for",
    "trunc_normal",
    "ParamStore",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "numeric_gradient",
    "max_relative_error",
    "check_gradients",
    "check_directional",
]
