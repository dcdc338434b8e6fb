"""Gradient extraction and finite-difference verification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, gradients


@dataclass
class GradientRecord:
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]


def backward(objective: Tensor, params: Mapping[str, Tensor]) -> GradientRecord:
    """Gradients of a scalar objective with respect to every named parameter."""
    names = list(params)
    grads = gradients(objective, [params[n] for n in names])
    return GradientRecord(value=objective.item(), grads=dict(zip(names, grads)))


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(
    function: Callable,
    point: np.ndarray | Mapping[str, np.ndarray],
    step: float = 1e-4,
) -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    ``point`` is an array, or a mapping of named arrays. ``function`` receives
    the point wrapped as gradient-tracking tensors (same structure) and must
    return a scalar :class:`Tensor`.
    """
    if isinstance(point, Mapping):
        names = list(point)
        values = {n: np.array(point[n], dtype=np.float64) for n in names}
    else:
        names = [None]
        values = {None: np.array(point, dtype=np.float64)}

    def evaluate(track: bool):
        leaves = {n: Tensor(values[n], requires_grad=track) for n in names}
        arg = leaves if names != [None] else leaves[None]
        return function(arg), leaves

    objective, leaves = evaluate(True)
    analytic = dict(zip(names, gradients(objective, [leaves[n] for n in names])))

    worst = 0.0
    for n in names:
        flat = values[n].reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = evaluate(False)[0].item()
            flat[i] = original - step
            down = evaluate(False)[0].item()
            flat[i] = original
            numeric[i] = (up - down) / (2.0 * step)
        if flat.size:
            err = relative_error(analytic[n].reshape(-1), numeric)
            worst = max(worst, float(err.max()))
    return worst
