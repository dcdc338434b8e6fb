"""Classifiers whose weights are predicted from class text features.

Three model kinds share one parameter layout convention:

``fc``
    score = f_t(t) . g_v(x); both mappers are two-layer nets (in -> hidden -> k).
``conv``
    score = pool(sum_i w'_i * a'_i) where a' = relu(conv(a)) reduces M feature
    maps to K' and w' = f'_t(t) is reshaped to (K', s, s).
``joint``
    the sum of the two, with f_t and f'_t sharing their hidden layer.

Affine weights are stored (out, in); convolution weights (out, in, s, s).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import BadMagicError, ConfigurationError, ContractError, DimensionError, FormatError
from .binio import Reader
from .mathcore import tensor as T
from .mathcore.layers import glorot_uniform
from .mathcore.tensor import Tensor, as_tensor

MODEL_KINDS = ("fc", "conv", "joint")
POOLING_MODES = ("average", "max")
REDUCER_SIZE = 3


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    p: int
    d: int = 0
    M: int = 0
    w: int = 0
    h: int = 0
    k: int = 50
    hidden: int = 300
    n_reduced: int = 5
    filter_size: int = 3
    pooling: str = "average"
    # identity activations everywhere; used for the bilinear-equivalence checks
    linear: bool = False

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.pooling not in POOLING_MODES:
            raise ConfigurationError(
                f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}"
            )
        if self.p < 1 or self.hidden < 1:
            raise ConfigurationError("p and hidden must be positive")
        if self.uses_fc and (self.d < 1 or self.k < 1):
            raise ConfigurationError(f"{self.kind} model needs d >= 1 and k >= 1")
        if self.uses_conv:
            if self.M < 1 or self.n_reduced < 1:
                raise ConfigurationError(f"{self.kind} model needs M >= 1 and K' >= 1")
            if self.n_reduced >= self.M:
                raise ConfigurationError(
                    f"reduced channel count K'={self.n_reduced} must be below M={self.M}"
                )
            if self.filter_size < 1 or self.filter_size % 2 == 0:
                raise ConfigurationError(
                    f"predicted filter size must be odd, got {self.filter_size}"
                )

    @property
    def uses_fc(self) -> bool:
        return self.kind in ("fc", "joint")

    @property
    def uses_conv(self) -> bool:
        return self.kind in ("conv", "joint")

    @property
    def filter_length(self) -> int:
        return self.n_reduced * self.filter_size**2

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Canonical parameter order and shapes for this configuration."""
        H, shapes = self.hidden, {}
        if self.uses_fc:
            shapes["text.hidden.weight"] = (H, self.p)
            shapes["text.hidden.bias"] = (H,)
            shapes["text.out.weight"] = (self.k, H)
            shapes["text.out.bias"] = (self.k,)
        if self.uses_conv:
            if self.kind == "conv":
                shapes["filter.hidden.weight"] = (H, self.p)
                shapes["filter.hidden.bias"] = (H,)
            shapes["filter.out.weight"] = (self.filter_length, H)
            shapes["filter.out.bias"] = (self.filter_length,)
        if self.uses_fc:
            shapes["visual.hidden.weight"] = (H, self.d)
            shapes["visual.hidden.bias"] = (H,)
            shapes["visual.out.weight"] = (self.k, H)
            shapes["visual.out.bias"] = (self.k,)
        if self.uses_conv:
            shapes["reducer.weight"] = (self.n_reduced, self.M, REDUCER_SIZE, REDUCER_SIZE)
            shapes["reducer.bias"] = (self.n_reduced,)
        return shapes


@dataclass
class Forward:
    scores: Tensor
    text_vectors: Tensor | None = None
    image_vectors: Tensor | None = None


class ZeroShotModel:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        shapes = config.param_shapes()
        if list(params) != list(shapes):
            missing = set(shapes) ^ set(params)
            raise ContractError(f"parameter names do not match {config.kind} layout: {missing}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise DimensionError(
                    f"{name} has shape {params[name].shape}, expected {shape}"
                )
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator | int = 0) -> "ZeroShotModel":
        rng = np.random.default_rng(rng)
        params = {}
        for name, shape in config.param_shapes().items():
            data = np.zeros(shape) if name.endswith(".bias") else glorot_uniform(rng, shape)
            params[name] = Tensor(data, requires_grad=True, name=name)
        return cls(config, params)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "ZeroShotModel":
        params = {
            name: Tensor(np.array(arrays[name], dtype=np.float64), requires_grad=True, name=name)
            for name in config.param_shapes()
        }
        return cls(config, params)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def copy(self) -> "ZeroShotModel":
        return ZeroShotModel.from_arrays(self.config, {n: a.copy() for n, a in self.arrays().items()})

    def with_params(self, params: dict[str, Tensor]) -> "ZeroShotModel":
        return ZeroShotModel(self.config, params)

    # -- building blocks (batched, differentiable) ------------------------

    @property
    def _act(self) -> Callable[[Tensor], Tensor]:
        return T.identity if self.config.linear else T.relu

    def _dense(self, x: Tensor, prefix: str) -> Tensor:
        W, b = self.params[f"{prefix}.weight"], self.params[f"{prefix}.bias"]
        return x @ W.T + b

    def _text_hidden(self, texts: Tensor, prefix: str) -> Tensor:
        self._check_width(texts, self.config.p, "text")
        return self._act(self._dense(texts, f"{prefix}.hidden"))

    def fc_weights(self, texts) -> Tensor:
        """Predicted fc classifier weights, one k-vector per text row."""
        if not self.config.uses_fc:
            raise ContractError(f"{self.config.kind} model has no fc branch")
        return self._dense(self._text_hidden(as_tensor(texts), "text"), "text.out")

    def conv_filters(self, texts) -> Tensor:
        """Predicted (C, K', s, s) convolution filters."""
        if not self.config.uses_conv:
            raise ContractError(f"{self.config.kind} model has no conv branch")
        texts = as_tensor(texts)
        prefix = "text" if self.config.kind == "joint" else "filter"
        flat = self._dense(self._text_hidden(texts, prefix), "filter.out")
        s = self.config.filter_size
        return flat.reshape(texts.shape[0], self.config.n_reduced, s, s)

    def visual_embed(self, x) -> Tensor:
        x = as_tensor(x)
        self._check_width(x, self.config.d, "image feature")
        return self._dense(self._act(self._dense(x, "visual.hidden")), "visual.out")

    def reduce_maps(self, maps) -> Tensor:
        maps = as_tensor(maps)
        cfg = self.config
        if maps.ndim != 4 or maps.shape[1] != cfg.M:
            raise DimensionError(f"feature maps must be (B, {cfg.M}, w, h), got {maps.shape}")
        out = T.conv2d(maps, self.params["reducer.weight"])
        return self._act(out + self.params["reducer.bias"].reshape(1, -1, 1, 1))

    def conv_scores(self, reduced: Tensor, filters: Tensor) -> Tensor:
        """(B, K', w, h) reduced maps against (C, K', s, s) filters -> (B, C)."""
        return T.global_pool(T.conv2d(reduced, filters), self.config.pooling)

    def forward(self, x, maps, texts, with_vectors: bool = False) -> Forward:
        """Scores of every image against every text row, shape (B, C)."""
        texts = as_tensor(texts)
        cfg = self.config
        scores = None
        text_parts, image_parts = [], []
        if cfg.uses_fc:
            if x is None:
                raise ContractError("fc branch needs flat image features")
            w = self.fc_weights(texts)
            g = self.visual_embed(x)
            scores = g @ w.T
            text_parts.append(w)
            image_parts.append(g)
        if cfg.uses_conv:
            if maps is None:
                raise ContractError("conv branch needs feature maps")
            filters = self.conv_filters(texts)
            reduced = self.reduce_maps(maps)
            conv = self.conv_scores(reduced, filters)
            scores = conv if scores is None else scores + conv
            if with_vectors:
                n_img = reduced.shape[0]
                text_parts.append(filters.reshape(texts.shape[0], cfg.filter_length))
                image_parts.append(
                    T.patch_mean(reduced, cfg.filter_size).reshape(n_img, cfg.filter_length)
                )
        if not with_vectors:
            return Forward(scores)
        return Forward(scores, _hcat(text_parts), _hcat(image_parts))

    def score_matrix(self, x, maps, texts) -> np.ndarray:
        if texts is None or len(texts) == 0:
            raise ContractError("score_batch needs at least one text")
        n = len(x) if x is not None else (len(maps) if maps is not None else 0)
        if n == 0:
            raise ContractError("score_batch needs at least one image")
        return self.forward(_plain(x), _plain(maps), _plain(texts)).scores.data

    def score_store(self, store, texts: np.ndarray, chunk: int = 512) -> np.ndarray:
        """Score every image of a feature store against every text row."""
        out = []
        for start in range(0, len(store), chunk):
            sl = slice(start, start + chunk)
            x = store.x[sl] if self.config.uses_fc else None
            maps = store.maps[sl] if self.config.uses_conv else None
            out.append(self.score_matrix(x, maps, texts))
        if not out:
            return np.zeros((0, len(texts)))
        return np.vstack(out)

    def _check_width(self, t: Tensor, width: int, what: str) -> None:
        if t.ndim != 2 or t.shape[1] != width:
            raise DimensionError(f"{what} matrix must be (n, {width}), got {t.shape}")


def _plain(a):
    return None if a is None else np.asarray(a, dtype=np.float64)


def _hcat(parts: list[Tensor]) -> Tensor:
    return parts[0] if len(parts) == 1 else T.concat(parts, axis=1)


# -- single-pair operations --------------------------------------------------


def _as_row(v, width: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != width:
        raise DimensionError(f"{what} must have length {width}, got shape {v.shape}")
    return v[None, :]


def predict_fc_weights(t, model: ZeroShotModel) -> np.ndarray:
    return model.fc_weights(_as_row(t, model.config.p, "text feature")).data[0]


def predict_conv_filters(t, model: ZeroShotModel) -> np.ndarray:
    return model.conv_filters(_as_row(t, model.config.p, "text feature")).data[0]


def score_fc(x, w_c, model: ZeroShotModel) -> float:
    w_c = np.asarray(w_c, dtype=np.float64)
    if w_c.shape != (model.config.k,):
        raise DimensionError(f"fc weights must have length {model.config.k}, got {w_c.shape}")
    g = model.visual_embed(_as_row(x, model.config.d, "image feature")).data[0]
    return float(w_c @ g)


def score_conv(a, filters, model: ZeroShotModel) -> float:
    cfg = model.config
    a = np.asarray(a, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    expected = (cfg.n_reduced, cfg.filter_size, cfg.filter_size)
    if filters.shape != expected:
        raise DimensionError(f"conv filters must be {expected}, got {filters.shape}")
    if a.ndim != 3:
        raise DimensionError(f"feature maps must be (M, w, h), got {a.shape}")
    reduced = model.reduce_maps(a[None])
    return float(model.conv_scores(reduced, Tensor(filters[None])).data[0, 0])


def score_joint(x, a, t, model: ZeroShotModel) -> float:
    if model.config.kind != "joint":
        raise ContractError(f"score_joint needs a joint model, got {model.config.kind!r}")
    return score_fc(x, predict_fc_weights(t, model), model) + score_conv(
        a, predict_conv_filters(t, model), model
    )


def score_pair(x, a, t, model: ZeroShotModel) -> float:
    kind = model.config.kind
    if kind == "fc":
        return score_fc(x, predict_fc_weights(t, model), model)
    if kind == "conv":
        return score_conv(a, predict_conv_filters(t, model), model)
    return score_joint(x, a, t, model)


def score_batch(x, maps, texts, model: ZeroShotModel) -> np.ndarray:
    """(B, C') score matrix; the text side is computed once per text row."""
    return model.score_matrix(x, maps, texts)


# -- checkpoint format --------------------------------------------------------

CHECKPOINT_MAGIC = b"ZSMP"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4s14I")


def save_checkpoint(model: ZeroShotModel, path: str | Path, metadata: dict | None = None) -> None:
    """Write the self-describing binary checkpoint.

    Layout (little-endian): magic, version, kind, p, d, M, w, h, k, K', s,
    pooling, flags, hidden, tensor count; then per tensor ``ndim``, the
    extents, and float64 values; then a length-prefixed UTF-8 JSON block.
    """
    cfg = model.config
    arrays = model.arrays()
    chunks = [
        _HEADER.pack(
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            MODEL_KINDS.index(cfg.kind),
            cfg.p, cfg.d, cfg.M, cfg.w, cfg.h, cfg.k, cfg.n_reduced, cfg.filter_size,
            POOLING_MODES.index(cfg.pooling),
            int(cfg.linear),
            cfg.hidden,
            len(arrays),
        )
    ]
    for arr in arrays.values():
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta)) + meta)
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[ZeroShotModel, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    reader = Reader(buf, str(path))
    magic = buf[:4]
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: expected magic {CHECKPOINT_MAGIC!r}, found {magic!r}")
    fields = reader.unpack(_HEADER)
    (_, version, kind, p, d, M, w, h, k, kp, s, pooling, flags, hidden, count) = fields
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if kind >= len(MODEL_KINDS) or pooling >= len(POOLING_MODES):
        raise FormatError(f"{path}: invalid model kind or pooling code")
    config = ModelConfig(
        kind=MODEL_KINDS[kind], p=p, d=d, M=M, w=w, h=h, k=k, hidden=hidden,
        n_reduced=kp, filter_size=s, pooling=POOLING_MODES[pooling], linear=bool(flags & 1),
    )
    shapes = config.param_shapes()
    if count != len(shapes):
        raise FormatError(f"{path}: expected {len(shapes)} tensors, header says {count}")
    arrays = {}
    for name, shape in shapes.items():
        (ndim,) = reader.unpack(struct.Struct("<I"))
        dims = reader.unpack(struct.Struct(f"<{ndim}I"))
        if tuple(dims) != shape:
            raise FormatError(f"{path}: tensor {name} has shape {dims}, expected {shape}")
        arrays[name] = reader.floats(int(np.prod(shape)), "<f8").reshape(shape)
    (meta_len,) = reader.unpack(struct.Struct("<I"))
    meta = json.loads(reader.take(meta_len).decode("utf-8")) if meta_len else {}
    return ZeroShotModel.from_arrays(config, arrays), meta


def config_dict(config: ModelConfig) -> dict:
    return asdict(config)
