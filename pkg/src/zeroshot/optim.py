"""Adam and the minibatch training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, TrainingError
from .losses import LOSS_KINDS, batch_loss, make_pair_batch
from .mathcore.tensor import gradients
from .model import ModelConfig, ZeroShotModel


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {g.shape}, parameter has {params[name].shape}"
            )
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        params[name] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    model: str = "fc"
    loss: str = "bce"
    batch_size: int = 200
    epochs: int = 100
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    margin: float = 1.0
    k: int = 50
    hidden: int = 300
    n_reduced: int = 5
    filter_size: int = 3
    pooling: str = "average"

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ConfigurationError(
                f"loss must be one of {', '.join(LOSS_KINDS)}; got {self.loss!r}"
            )
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.lr}")

    def model_config(self, store, p: int) -> ModelConfig:
        M, w, h = store.map_shape
        return ModelConfig(
            kind=self.model, p=p, d=store.d, M=M, w=w, h=h, k=self.k, hidden=self.hidden,
            n_reduced=self.n_reduced, filter_size=self.filter_size, pooling=self.pooling,
        )


@dataclass
class TrainResult:
    model: ZeroShotModel
    losses: list[float]


def _inputs(model: ZeroShotModel, store, idx):
    x = store.x[idx].astype(np.float64) if model.config.uses_fc else None
    maps = store.maps[idx].astype(np.float64) if model.config.uses_conv else None
    return x, maps


def full_objective(model: ZeroShotModel, store, texts: np.ndarray, kind: str,
                   margin: float = 1.0, classes=None) -> float:
    """Loss summed over every image against every class in ``classes``."""
    classes = np.unique(store.labels) if classes is None else np.asarray(classes)
    x, maps = _inputs(model, store, np.arange(len(store)))
    I = (store.labels[:, None] == classes[None, :]).astype(np.float64)
    return batch_loss(model, x, maps, texts[classes], I, kind, margin).item()


def train(store, texts: np.ndarray, config: TrainConfig, model: ZeroShotModel | None = None,
          callback=None) -> TrainResult:
    """Minimize the configured loss with Adam over shuffled minibatches.

    ``store`` holds the training images and ``texts`` is the (C_total, p)
    matrix of class text features indexed by label. Each epoch reshuffles
    the images and walks them in batches of ``batch_size`` (the last one may
    be smaller), so a run takes ``epochs * ceil(N / B)`` steps.
    """
    n = len(store)
    if n == 0:
        raise ContractError("cannot train on an empty feature store")
    texts = np.asarray(texts, dtype=np.float64)
    if texts.ndim != 2 or texts.shape[0] < store.n_classes:
        raise DimensionError(
            f"text matrix {texts.shape} must have one row per class ({store.n_classes})"
        )
    if model is None:
        model = ZeroShotModel.initialize(
            config.model_config(store, texts.shape[1]), np.random.default_rng([config.seed, 1])
        )
    elif model.config.p != texts.shape[1]:
        raise DimensionError(f"model expects p={model.config.p}, texts have {texts.shape[1]}")
    batch_rng = np.random.default_rng([config.seed, 2])
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    names = list(model.params)
    arrays = model.arrays()
    losses: list[float] = []
    B = min(config.batch_size, n)
    for epoch in range(config.epochs):
        order = batch_rng.permutation(n)
        for start in range(0, n, B):
            batch = make_pair_batch(order[start : start + B], store.labels)
            x, maps = _inputs(model, store, batch.indices)
            loss = batch_loss(model, x, maps, texts[batch.classes], batch.indicators,
                              config.loss, config.margin)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at step {len(losses)}")
            grads = gradients(loss, [model.params[k] for k in names])
            adam_step(arrays, dict(zip(names, grads)), state)
            losses.append(value)
            if callback is not None:
                callback(len(losses), value, model)
    return TrainResult(model, losses)


def write_loss_trace(losses, path, header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines.append("step,loss")
    lines += [f"{i},{v!r}" for i, v in enumerate(losses, 1)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
