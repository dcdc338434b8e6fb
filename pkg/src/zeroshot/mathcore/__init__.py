"""Dense float64 tensors, layers, and reverse-mode gradients."""

from .gradcheck import GradientRecord, backward, grad_check, relative_error
from .layers import (
    LayerParams,
    affine,
    conv2d,
    conv_layer,
    global_pool,
    glorot_uniform,
    init_layer,
    relu,
    sigmoid,
)
from .tensor import Tensor, as_tensor, gradients, patch_mean, softplus

__all__ = [
    "GradientRecord",
    "LayerParams",
    "Tensor",
    "affine",
    "as_tensor",
    "backward",
    "conv2d",
    "conv_layer",
    "global_pool",
    "glorot_uniform",
    "grad_check",
    "gradients",
    "init_layer",
    "patch_mean",
    "relative_error",
    "relu",
    "sigmoid",
    "softplus",
]
