"""Training objectives and Monte-Carlo minibatch construction.

All losses are summed over the (image, class) pairs of a batch. The binary
cross-entropy is returned as a negative log-likelihood so that it is
minimized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError
from .mathcore import tensor as T
from .mathcore.tensor import Tensor, as_tensor

LOSS_KINDS = ("bce", "hinge", "euclidean")


@dataclass
class PairBatch:
    """B sampled images and the distinct classes among them.

    ``indicators[i, j]`` is 1 when image ``i`` belongs to ``classes[j]``.
    """

    indices: np.ndarray
    labels: np.ndarray
    classes: np.ndarray
    indicators: np.ndarray

    @property
    def signed(self) -> np.ndarray:
        return to_signed(self.indicators)


def to_signed(indicators) -> np.ndarray:
    return 2.0 * np.asarray(indicators, dtype=np.float64) - 1.0


def make_pair_batch(indices: np.ndarray, labels: np.ndarray) -> PairBatch:
    indices = np.asarray(indices)
    batch_labels = np.asarray(labels)[indices]
    classes = np.unique(batch_labels)
    indicators = (batch_labels[:, None] == classes[None, :]).astype(np.float64)
    return PairBatch(indices, batch_labels, classes, indicators)


def sample_minibatch(labels, batch_size: int, rng: np.random.Generator) -> PairBatch:
    """Draw ``batch_size`` images uniformly without replacement.

    The class columns are exactly the distinct labels drawn, so scoring the
    batch costs O(B x B) rather than O(N x C).
    """
    labels = np.asarray(labels)
    n = len(labels)
    if batch_size < 1 or batch_size > n:
        raise ConfigurationError(f"batch size {batch_size} must lie in [1, {n}]")
    idx = rng.choice(n, size=batch_size, replace=False)
    return make_pair_batch(idx, labels)


def _check_pairs(scores: Tensor, indicators: np.ndarray) -> None:
    if scores.shape != indicators.shape:
        raise DimensionError(
            f"score matrix {scores.shape} and indicator matrix {indicators.shape} differ"
        )


def bce_loss(scores, indicators) -> Tensor:
    """-sum[I ln sigmoid(y) + (1 - I) ln(1 - sigmoid(y))] via softplus.

    -ln sigmoid(y) = softplus(-y) and -ln(1 - sigmoid(y)) = softplus(y), so
    large |y| never overflows.
    """
    scores = as_tensor(scores)
    I = np.asarray(indicators, dtype=np.float64)
    _check_pairs(scores, I)
    if not np.all((I == 0.0) | (I == 1.0)):
        raise ContractError("BCE indicators must be 0 or 1")
    return (T.softplus(-scores) * I + T.softplus(scores) * (1.0 - I)).sum()


def hinge_loss(scores, indicators, margin: float = 1.0) -> Tensor:
    """sum max(0, margin - I * y) with I in {-1, +1}."""
    scores = as_tensor(scores)
    I = np.asarray(indicators, dtype=np.float64)
    _check_pairs(scores, I)
    if not np.all(np.abs(I) == 1.0):
        raise ContractError("hinge indicators must be -1 or +1")
    if margin <= 0:
        raise ConfigurationError(f"margin must be positive, got {margin}")
    return T.relu(margin - scores * I).sum()


def squared_norms(vectors: Tensor) -> Tensor:
    return (vectors * vectors).sum(axis=1)


def euclidean_surrogate(scores, text_vectors, image_vectors) -> Tensor:
    """score - |w|^2/2 - |g|^2/2, i.e. -|w - g|^2/2 when score = w.g.

    ``scores`` is (B, C), ``text_vectors`` (C, q), ``image_vectors`` (B, q).
    """
    scores = as_tensor(scores)
    tn = squared_norms(as_tensor(text_vectors)).reshape(1, -1)
    gn = squared_norms(as_tensor(image_vectors)).reshape(-1, 1)
    return scores - 0.5 * tn - 0.5 * gn


def euclidean_loss(text_vectors, image_vectors, indicators, margin: float = 1.0,
                   scores=None) -> Tensor:
    """Hinge loss on the negative half squared distance between embeddings.

    Without ``scores`` the dot products of the two embeddings are used; a
    model whose score is not a plain dot product passes its own scores.
    """
    text_vectors, image_vectors = as_tensor(text_vectors), as_tensor(image_vectors)
    if text_vectors.ndim != 2 or image_vectors.ndim != 2 or (
        text_vectors.shape[1] != image_vectors.shape[1]
    ):
        raise DimensionError(
            f"embedding shapes {text_vectors.shape} and {image_vectors.shape} do not match"
        )
    if scores is None:
        scores = image_vectors @ text_vectors.T
    return hinge_loss(euclidean_surrogate(scores, text_vectors, image_vectors), indicators, margin)


def batch_loss(model, x, maps, texts, indicators, kind: str, margin: float = 1.0) -> Tensor:
    """Objective of ``kind`` for one batch, with 0/1 ``indicators``."""
    if kind not in LOSS_KINDS:
        raise ConfigurationError(f"loss must be one of {LOSS_KINDS}, got {kind!r}")
    fwd = model.forward(x, maps, texts, with_vectors=kind == "euclidean")
    if kind == "bce":
        return bce_loss(fwd.scores, indicators)
    if kind == "hinge":
        return hinge_loss(fwd.scores, to_signed(indicators), margin)
    return euclidean_loss(
        fwd.text_vectors, fwd.image_vectors, to_signed(indicators), margin, scores=fwd.scores
    )
