"""Image feature stores, seen/unseen splits, and synthetic benchmarks.

ZSFB layout (all little-endian)::

    b"ZSFB" | u32 version=1 | u32 N | u32 C_total | u32 d | u32 M | u32 w | u32 h
    N x ( u32 image_id | u32 label | d x f32 | M*w*h x f32 if M > 0 )
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import Reader
from .errors import BadMagicError, ConfigurationError, FormatError, LabelError
from .errors import TruncatedFileError

ZSFB_MAGIC = b"ZSFB"
ZSFB_VERSION = 1
_HEADER = struct.Struct("<4s7I")


@dataclass
class FeatureStore:
    ids: np.ndarray
    labels: np.ndarray
    x: np.ndarray
    maps: np.ndarray | None
    n_classes: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.uint32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.float32)
        if self.x.ndim != 2:
            raise FormatError(f"flat features must be (N, d), got {self.x.shape}")
        n = len(self.ids)
        if len(self.labels) != n or len(self.x) != n:
            raise FormatError("ids, labels, and features disagree on N")
        if self.maps is not None:
            self.maps = np.asarray(self.maps, dtype=np.float32)
            if self.maps.ndim != 4 or len(self.maps) != n:
                raise FormatError(f"feature maps must be (N, M, w, h), got {self.maps.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            bad = int(self.labels[(self.labels < 0) | (self.labels >= self.n_classes)][0])
            raise LabelError(f"label {bad} references a class outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def map_shape(self) -> tuple[int, int, int]:
        return (0, 0, 0) if self.maps is None else tuple(self.maps.shape[1:])

    def subset(self, indices) -> "FeatureStore":
        indices = np.asarray(indices, dtype=np.int64)
        maps = None if self.maps is None else self.maps[indices]
        return FeatureStore(self.ids[indices], self.labels[indices], self.x[indices], maps,
                            self.n_classes)


def save_features(store: FeatureStore, path: str | Path) -> None:
    M, w, h = store.map_shape
    n = len(store)
    record = np.dtype([("id", "<u4"), ("label", "<u4"), ("x", "<f4", (store.d,))]
                      + ([("a", "<f4", (M * w * h,))] if M else []))
    rows = np.zeros(n, dtype=record)
    rows["id"] = store.ids
    rows["label"] = store.labels
    rows["x"] = store.x
    if M:
        rows["a"] = store.maps.reshape(n, -1)
    header = _HEADER.pack(ZSFB_MAGIC, ZSFB_VERSION, n, store.n_classes, store.d, M, w, h)
    Path(path).write_bytes(header + rows.tobytes())


def load_features(path: str | Path) -> FeatureStore:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != ZSFB_MAGIC:
        raise BadMagicError(f"{path}: expected magic {ZSFB_MAGIC!r}, found {buf[:4]!r}")
    reader = Reader(buf, str(path))
    _, version, n, n_classes, d, M, w, h = reader.unpack(_HEADER)
    if version != ZSFB_VERSION:
        raise FormatError(f"{path}: unsupported ZSFB version {version}")
    if M and (w == 0 or h == 0):
        raise FormatError(f"{path}: feature maps declared with zero extent")
    per_map = M * w * h
    record = np.dtype([("id", "<u4"), ("label", "<u4"), ("x", "<f4", (d,))]
                      + ([("a", "<f4", (per_map,))] if M else []))
    payload = n * record.itemsize
    available = len(buf) - reader.offset
    if available < payload:
        # report the offset of the first incomplete record
        complete = available // record.itemsize
        offset = reader.offset + complete * record.itemsize
        raise TruncatedFileError(
            f"{path}: truncated payload, {available} of {payload} bytes present; "
            f"record {complete} incomplete at byte offset {offset}",
            offset=offset,
        )
    if available > payload:
        raise FormatError(f"{path}: {available - payload} trailing bytes after {n} records")
    rows = np.frombuffer(reader.take(payload), dtype=record)
    labels = rows["label"].astype(np.int64)
    if n and labels.max() >= n_classes:
        i = int(np.argmax(labels >= n_classes))
        raise LabelError(
            f"{path}: record {i} has label {labels[i]} but C_total is {n_classes}"
        )
    maps = rows["a"].reshape(n, M, w, h).copy() if M else None
    return FeatureStore(rows["id"].copy(), labels, rows["x"].reshape(n, d).copy(), maps,
                        n_classes)


def load_labels_csv(path: str | Path) -> dict[int, int]:
    """Read an ``image_id,class_id`` CSV (a header row is optional)."""
    mapping = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and not row[0].strip().isdigit():
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'image_id,class_id'")
            mapping[int(row[0])] = int(row[1])
    return mapping


def apply_labels(store: FeatureStore, mapping: dict[int, int]) -> FeatureStore:
    missing = [int(i) for i in store.ids if int(i) not in mapping]
    if missing:
        raise LabelError(f"no label for image id {missing[0]}")
    labels = np.array([mapping[int(i)] for i in store.ids], dtype=np.int64)
    return FeatureStore(store.ids, labels, store.x, store.maps, store.n_classes)


# -- splits -------------------------------------------------------------------


@dataclass
class SplitSpec:
    """Seen/unseen partition of the classes plus a per-image role.

    Every image index appears in exactly one of ``train``, ``seen_test`` and
    ``unseen_test``.
    """

    seed: int
    unseen: tuple[int, ...]
    seen: tuple[int, ...]
    train: np.ndarray
    seen_test: np.ndarray
    unseen_test: np.ndarray

    def __post_init__(self):
        self.unseen = tuple(int(c) for c in self.unseen)
        self.seen = tuple(int(c) for c in self.seen)
        if set(self.unseen) & set(self.seen):
            raise ConfigurationError("seen and unseen class sets overlap")
        for name in ("train", "seen_test", "unseen_test"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))

    @property
    def test(self) -> np.ndarray:
        return np.sort(np.concatenate([self.seen_test, self.unseen_test]))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "unseen": list(self.unseen),
            "seen": list(self.seen),
            "train": self.train.tolist(),
            "seen_test": self.seen_test.tolist(),
            "unseen_test": self.unseen_test.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitSpec":
        return cls(data["seed"], data["unseen"], data["seen"], data["train"],
                   data["seen_test"], data["unseen_test"])


def make_split(store: FeatureStore, n_unseen: int, train_fraction: float = 0.8,
               seed: int = 0, unseen=None) -> SplitSpec:
    """Pick unseen classes, then split each seen class's images into train/test.

    ``unseen`` forces a particular unseen class set instead of drawing one.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(
            f"train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )
    C = store.n_classes
    rng = np.random.default_rng(seed)
    if unseen is None:
        if not 0 <= n_unseen < C:
            raise ConfigurationError(f"n_unseen must lie in [0, {C}), got {n_unseen}")
        unseen = np.sort(rng.choice(C, size=n_unseen, replace=False))
    unseen = tuple(sorted(int(c) for c in unseen))
    if any(not 0 <= c < C for c in unseen) or len(set(unseen)) >= C:
        raise ConfigurationError(f"invalid unseen class set {unseen} for {C} classes")
    seen = tuple(c for c in range(C) if c not in set(unseen))

    train, seen_test = [], []
    for c in seen:
        members = np.flatnonzero(store.labels == c)
        if len(members) < 2:
            raise ConfigurationError(
                f"seen class {c} has {len(members)} image(s); at least 2 are needed"
            )
        members = rng.permutation(members)
        n_train = int(np.clip(round(train_fraction * len(members)), 1, len(members) - 1))
        train.append(members[:n_train])
        seen_test.append(members[n_train:])
    unseen_test = np.flatnonzero(np.isin(store.labels, unseen))
    return SplitSpec(
        seed,
        unseen,
        seen,
        np.sort(np.concatenate(train)) if train else np.zeros(0, np.int64),
        np.sort(np.concatenate(seen_test)) if seen_test else np.zeros(0, np.int64),
        unseen_test,
    )


def make_folds(store: FeatureStore, n_folds: int, n_unseen: int, train_fraction: float = 0.8,
               seed: int = 0) -> list[SplitSpec]:
    """Seeded splits whose unseen sets are disjoint when the classes allow it."""
    if n_folds < 1:
        raise ConfigurationError(f"need at least one fold, got {n_folds}")
    C = store.n_classes
    order = np.random.default_rng(seed).permutation(C)
    folds = []
    for f in range(n_folds):
        if n_folds * n_unseen <= C:
            unseen = order[f * n_unseen : (f + 1) * n_unseen]
        else:
            unseen = np.random.default_rng([seed, f]).choice(C, size=n_unseen, replace=False)
        folds.append(make_split(store, n_unseen, train_fraction, seed + f, unseen=unseen))
    return folds


# -- synthetic benchmarks -----------------------------------------------------

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def synthetic_word(prefix: str, i: int, width: int = 3) -> str:
    letters = []
    for _ in range(width):
        i, r = divmod(i, 26)
        letters.append(_LETTERS[r])
    return prefix + "".join(reversed(letters))


def _article(rng: np.random.Generator, terms: list[str], counts: np.ndarray) -> str:
    tokens = [t for t, n in zip(terms, counts) for _ in range(int(n))]
    tokens = [tokens[i] for i in rng.permutation(len(tokens))]
    lines = [" ".join(tokens[i : i + 12]) + "." for i in range(0, len(tokens), 12)]
    return "\n".join(lines) + "\n"


def _counts_for(tf: np.ndarray) -> np.ndarray:
    """Token counts whose log-TF 1 + ln(count) best matches ``tf``."""
    return np.maximum(1, np.rint(np.exp(tf - 1.0))).astype(int)


@dataclass
class SyntheticData:
    store: FeatureStore
    corpus: dict[int, str]
    terms: list[str]
    text_vectors: np.ndarray
    info: dict = field(default_factory=dict)
    # d x p matrix A with x = A unit(t) + noise
    projection: np.ndarray | None = None


def _images(rng, class_vectors, per_class, d, M, w, h, sigma):
    """Flat features x = A t + noise and maps with class-dependent channel means."""
    n_classes, p = class_vectors.shape
    unit = class_vectors / np.maximum(np.linalg.norm(class_vectors, axis=1, keepdims=True), 1e-12)
    A = rng.standard_normal((d, p))
    labels = np.repeat(np.arange(n_classes), per_class)
    n = len(labels)
    x = unit[labels] @ A.T + sigma * rng.standard_normal((n, d))
    maps = None
    if M:
        Bm = rng.standard_normal((M, p))
        means = unit[labels] @ Bm.T
        maps = means[:, :, None, None] + sigma * rng.standard_normal((n, M, w, h))
    return labels, x, maps, A


def generate_synthetic(n_classes: int, per_class: int, p: int, d: int, M: int = 0, w: int = 0,
                       h: int = 0, sigma: float = 0.3, seed: int = 0,
                       n_attributes: int | None = None, attribute_rate: float = 0.3,
                       term_rate: float = 1.0) -> SyntheticData:
    """Classes built from shared latent attributes.

    The ``p`` vocabulary terms are partitioned into attribute groups (about
    p / 32 of them by default, never too few to give each class its own
    pattern). Each class switches on a random subset of
    attributes and its text vector has a sparse random support inside the
    active groups (each member term kept with ``term_rate``), with log-TF weights
    in [1, 1 + ln 6]. Unseen classes are therefore new combinations of
    attributes that seen classes already exhibit. Articles repeat each term
    ``round(exp(tf - 1))`` times, so tf-idf recovers the intended support
    while the weights are quantized.
    """
    for name, v in (("n_classes", n_classes), ("per_class", per_class), ("p", p), ("d", d)):
        if v < 1:
            raise ConfigurationError(f"{name} must be >= 1, got {v}")
    if M and (w < 1 or h < 1):
        raise ConfigurationError("feature maps need w >= 1 and h >= 1")
    if sigma < 0:
        raise ConfigurationError(f"noise level must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    # enough groups that every class can get its own attribute pattern
    n_attr = n_attributes or min(p, max(round(p / 32), math.ceil(math.log2(n_classes + 1))))
    terms = [synthetic_word("w", i) for i in range(p)]
    groups = np.array_split(rng.permutation(p), n_attr)

    vectors = np.zeros((n_classes, p))
    patterns = set()
    for c in range(n_classes):
        for _ in range(100):
            active = rng.random(n_attr) < attribute_rate
            if not active.any():
                active[rng.integers(n_attr)] = True
            key = tuple(np.flatnonzero(active))
            if key not in patterns or len(patterns) >= 2**n_attr - 1:
                break
        patterns.add(key)
        for a in key:
            members = groups[a]
            chosen = members[rng.random(len(members)) < term_rate]
            if len(chosen) == 0:
                chosen = members[[rng.integers(len(members))]]
            vectors[c, chosen] = rng.uniform(1.0, 1.0 + np.log(6.0), size=len(chosen))

    corpus = {c: _article(rng, terms, _counts_for(vectors[c]) * (vectors[c] > 0))
              for c in range(n_classes)}
    labels, x, maps, A = _images(rng, vectors, per_class, d, M, w, h, sigma)
    store = FeatureStore(np.arange(len(labels)), labels, x, maps, n_classes)
    info = {"generator": "attributes", "n_attributes": n_attr, "sigma": sigma, "seed": seed}
    return SyntheticData(store, corpus, terms, vectors, info, A)


def generate_signal_synthetic(n_classes: int, per_class: int, n_signal: int, d: int,
                              n_filler: int = 20, filler_per_class: int = 8,
                              sigma: float = 0.3, seed: int = 0) -> SyntheticData:
    """Classes whose visual identity is carried by one article term.

    Class ``c`` uses signal term ``c % n_signal`` (so classes ``c`` and
    ``c + n_signal`` look alike) plus a random handful of filler terms that
    have no visual counterpart. Images depend only on the signal term.
    """
    if n_signal < 1 or n_signal > n_classes:
        raise ConfigurationError(f"n_signal must lie in [1, {n_classes}], got {n_signal}")
    if filler_per_class > n_filler:
        raise ConfigurationError("filler_per_class exceeds the filler vocabulary")
    rng = np.random.default_rng(seed)
    terms = [synthetic_word("sig", i) for i in range(n_signal)]
    terms += [synthetic_word("fil", i) for i in range(n_filler)]
    p = len(terms)
    counts = np.zeros((n_classes, p), dtype=int)
    for c in range(n_classes):
        counts[c, c % n_signal] = 4
        filler = n_signal + rng.choice(n_filler, size=filler_per_class, replace=False)
        counts[c, filler] = rng.integers(1, 4, size=filler_per_class)
    corpus = {c: _article(rng, terms, counts[c]) for c in range(n_classes)}
    visual = np.zeros((n_classes, p))
    visual[np.arange(n_classes), np.arange(n_classes) % n_signal] = 1.0
    labels, x, _, A = _images(rng, visual, per_class, d, 0, 0, 0, sigma)
    store = FeatureStore(np.arange(len(labels)), labels, x, None, n_classes)
    info = {"generator": "signal", "n_signal": n_signal, "sigma": sigma, "seed": seed,
            "signal_terms": {c: terms[c % n_signal] for c in range(n_classes)}}
    return SyntheticData(store, corpus, terms, counts.astype(float), info, A)
