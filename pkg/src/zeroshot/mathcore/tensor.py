"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation on a :class:`Tensor` records its parents and a closure that
maps the output gradient to parent gradients. :func:`gradients` walks the
recorded graph in reverse topological order. Nothing is stored globally;
the graph lives only as long as the output tensor references it.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, ContractError, DimensionError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A float64 array that remembers how it was computed."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: BackwardFn | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # -- array protocol ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn) -> Tensor:
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def identity(a) -> Tensor:
    return as_tensor(a)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def softplus(a) -> Tensor:
    """``ln(1 + e^x)`` without overflow; its derivative is the sigmoid."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _node(out, (a,), lambda g: (g * stable_sigmoid(x),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = stable_sigmoid(a.data)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


# -- shape and reduction ----------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _node(out, parts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _node(a.data.T, (a,), lambda g: (g.T,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- convolution and pooling ------------------------------------------------


def _check_filter(size: int) -> int:
    if size % 2 == 0:
        raise ConfigurationError(f"filter size must be odd, got {size}")
    return size // 2


def conv2d(x, filters) -> Tensor:
    """Same-padded, stride-1 cross-correlation.

    ``x`` is (B, C, H, W), ``filters`` is (O, C, s, s); the result is
    (B, O, H, W). Output channel ``o`` sums the correlations of every input
    channel with ``filters[o, c]``.
    """
    x, filters = as_tensor(x), as_tensor(filters)
    if x.ndim != 4 or filters.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D operands, got {x.shape} and {filters.shape}")
    if filters.shape[1] != x.shape[1]:
        raise DimensionError(
            f"filter channels {filters.shape} do not match input channels {x.shape}"
        )
    if filters.shape[2] != filters.shape[3]:
        raise DimensionError(f"filters must be square, got {filters.shape}")
    s = filters.shape[-1]
    pad = _check_filter(s)
    _, _, H, W = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(xp, (s, s), axis=(2, 3))
    out = np.einsum("bchwij,ocij->bohw", windows, filters.data, optimize=True)

    def backward(g):
        g_filters = np.einsum("bohw,bchwij->ocij", g, windows, optimize=True)
        g_xp = np.zeros_like(xp)
        for i in range(s):
            for j in range(s):
                g_xp[:, :, i : i + H, j : j + W] += np.einsum(
                    "bohw,oc->bchw", g, filters.data[:, :, i, j], optimize=True
                )
        return g_xp[:, :, pad : pad + H, pad : pad + W], g_filters

    return _node(out, (x, filters), backward)


def patch_mean(x, size: int) -> Tensor:
    """Spatial mean of every zero-padded ``size``x``size`` window offset.

    Maps (B, C, H, W) to (B, C, s, s). Average-pooling a same-padded
    correlation equals the inner product of the filter with this tensor.
    """
    x = as_tensor(x)
    pad = _check_filter(size)
    _, _, H, W = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = sliding_window_view(xp, (H, W), axis=(2, 3)).mean(axis=(-2, -1))

    def backward(g):
        g_xp = np.zeros_like(xp)
        scale = 1.0 / (H * W)
        for i in range(size):
            for j in range(size):
                g_xp[:, :, i : i + H, j : j + W] += g[:, :, i, j, None, None] * scale
        return (g_xp[:, :, pad : pad + H, pad : pad + W],)

    return _node(out, (x,), backward)


def global_pool(x, mode: str = "average") -> Tensor:
    """Reduce the last two (spatial) axes to a scalar per leading index."""
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-1] == 0 or x.shape[-2] == 0:
        raise DimensionError(f"global_pool needs a nonempty map, got shape {x.shape}")
    if mode == "average":
        area = x.shape[-1] * x.shape[-2]
        out = x.data.mean(axis=(-2, -1))
        return _node(
            out, (x,), lambda g: (np.broadcast_to(g[..., None, None] / area, x.shape).copy(),)
        )
    if mode == "max":
        out = x.data.max(axis=(-2, -1))
        hit = x.data == out[..., None, None]
        share = hit / hit.sum(axis=(-2, -1), keepdims=True)
        return _node(out, (x,), lambda g: (g[..., None, None] * share,))
    raise ConfigurationError(f"unknown pooling mode {mode!r}; expected 'average' or 'max'")


# -- reverse pass -----------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def gradients(objective: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Exact gradients of a scalar ``objective`` with respect to ``wrt``.

    Tensors in ``wrt`` that the objective does not depend on get zeros.
    """
    if objective.size != 1:
        raise ContractError(f"objective must be a scalar, got shape {objective.shape}")
    wrt = list(wrt)
    grads: dict[int, np.ndarray] = {}
    if objective.requires_grad:
        grads[id(objective)] = np.ones_like(objective.data)
        for node in reversed(_topological(objective)):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
    return [
        np.array(grads[id(t)], dtype=np.float64).reshape(t.shape)
        if id(t) in grads
        else np.zeros_like(t.data)
        for t in wrt
    ]
