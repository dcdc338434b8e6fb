"""Network layers built on the autodiff core.

The functions here accept either plain arrays or :class:`Tensor` values and
return tensors, so the same code serves inference and training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DimensionError
from . import tensor as T
from .tensor import Tensor, as_tensor


@dataclass
class LayerParams:
    weights: Tensor
    biases: Tensor
    kind: str = "affine"

    def __post_init__(self):
        if self.kind not in ("affine", "convolution"):
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        width = self.weights.shape[0]
        if self.biases.shape != (width,):
            raise DimensionError(
                f"bias shape {self.biases.shape} does not match output width {width}"
            )


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out))."""
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_out = shape[0] * receptive
    fan_in = (shape[1] if len(shape) > 1 else shape[0]) * receptive
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_layer(
    rng: np.random.Generator, shape: tuple[int, ...], kind: str = "affine", name: str = ""
) -> LayerParams:
    weights = Tensor(glorot_uniform(rng, shape), requires_grad=True, name=f"{name}.weight")
    biases = Tensor(np.zeros(shape[0]), requires_grad=True, name=f"{name}.bias")
    return LayerParams(weights, biases, kind)


def affine(x, params: LayerParams) -> Tensor:
    """``weights @ x + biases`` for a vector, or row-wise for a (B, n) batch."""
    x = as_tensor(x)
    W, b = params.weights, params.biases
    n_in = W.shape[1]
    if x.shape[-1] != n_in or x.ndim not in (1, 2):
        raise DimensionError(f"input shape {x.shape} does not match weight shape {W.shape}")
    if x.ndim == 1:
        return (x.reshape(1, n_in) @ W.T + b).reshape(W.shape[0])
    return x @ W.T + b


relu = T.relu


def sigmoid(x):
    """Logistic function, evaluated without overflow for any finite input."""
    if isinstance(x, Tensor):
        return T.sigmoid(x)
    out = T.stable_sigmoid(x)
    return float(out) if np.ndim(out) == 0 else out


def conv2d(x, filters) -> Tensor:
    """Same-padded stride-1 correlation of an (M, w, h) stack or a (B, M, w, h) batch."""
    x = as_tensor(x)
    if x.ndim == 3:
        return T.conv2d(x.reshape(1, *x.shape), filters).reshape(
            as_tensor(filters).shape[0], *x.shape[1:]
        )
    return T.conv2d(x, filters)


def conv_layer(x, params: LayerParams) -> Tensor:
    out = T.conv2d(x, params.weights)
    return out + params.biases.reshape(1, -1, 1, 1)


global_pool = T.global_pool
