"""tf-idf featurization of per-class articles with log-scaled term frequency.

Weights are ``(1 + ln count) * ln(C / df)``. A term that occurs in every
article gets idf 0 and therefore weight 0 everywhere.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigurationError, ContractError, FormatError

_SPLIT = re.compile(r"[^a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on anything non-alphabetic, drop tokens shorter than 2."""
    return [tok for tok in _SPLIT.split(text.lower()) if len(tok) >= 2]


@dataclass
class Vocabulary:
    terms: list[str]
    doc_freq: np.ndarray
    n_docs: int
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.doc_freq = np.asarray(self.doc_freq, dtype=np.int64)
        self.index = {t: i for i, t in enumerate(self.terms)}
        if len(self.index) != len(self.terms):
            raise ContractError("vocabulary terms must be unique")

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def idf(self) -> np.ndarray:
        return np.log(self.n_docs / self.doc_freq)

    def save(self, path: str | Path, header: str | None = None) -> None:
        """Write ``term<TAB>df`` lines in index order, preceded by ``#`` comment lines."""
        lines = [f"# n_docs={self.n_docs}"]
        if header:
            lines.append(f"# {header}")
        lines += [f"{t}\t{df}" for t, df in zip(self.terms, self.doc_freq)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        terms, dfs, n_docs = [], [], None
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if line.startswith("#"):
                m = re.match(r"#\s*n_docs=(\d+)", line)
                if m:
                    n_docs = int(m.group(1))
                continue
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].isdigit():
                raise FormatError(f"{path}:{lineno}: expected 'term<TAB>df', got {line!r}")
            terms.append(parts[0])
            dfs.append(int(parts[1]))
        if n_docs is None:
            n_docs = max(dfs, default=0)
        return cls(terms, np.array(dfs, dtype=np.int64), n_docs)


def build_vocabulary(corpus: Mapping[int, str] | Iterable[str]) -> Vocabulary:
    """Collect every term of the corpus, sorted, with its document frequency."""
    articles = list(corpus.values()) if isinstance(corpus, Mapping) else list(corpus)
    if len(articles) < 2:
        raise ConfigurationError(
            f"tf-idf needs at least 2 articles, got {len(articles)}"
        )
    df: Counter[str] = Counter()
    for text in articles:
        df.update(set(tokenize(text)))
    terms = sorted(df)
    return Vocabulary(terms, np.array([df[t] for t in terms], dtype=np.int64), len(articles))


def compute_tfidf(article: str, vocab: Vocabulary) -> np.ndarray:
    counts = Counter(tok for tok in tokenize(article) if tok in vocab.index)
    vec = np.zeros(len(vocab))
    if not counts:
        return vec
    idx = np.fromiter((vocab.index[t] for t in counts), dtype=np.int64, count=len(counts))
    tf = 1.0 + np.log(np.fromiter(counts.values(), dtype=np.float64, count=len(counts)))
    vec[idx] = tf * vocab.idf[idx]
    return vec


def featurize_corpus(corpus: Mapping[int, str]) -> tuple[Vocabulary, dict[int, np.ndarray]]:
    vocab = build_vocabulary(corpus)
    return vocab, {c: compute_tfidf(text, vocab) for c, text in sorted(corpus.items())}


def text_matrix(features: Mapping[int, np.ndarray], n_classes: int | None = None) -> np.ndarray:
    """Stack per-class vectors into a (C, p) matrix indexed by class id."""
    if not features:
        raise ContractError("no text features given")
    n = n_classes if n_classes is not None else max(features) + 1
    p = len(next(iter(features.values())))
    out = np.zeros((n, p))
    for c, vec in features.items():
        out[c] = vec
    return out


def delete_term_rescaled(feature: np.ndarray, index: int) -> np.ndarray:
    """Zero one entry, then rescale so the L2 norm is unchanged.

    When the deleted entry held all the mass the zeroed vector is returned
    as is.
    """
    feature = np.asarray(feature, dtype=np.float64)
    if not 0 <= index < feature.shape[-1]:
        raise ContractError(f"term index {index} out of range for length {feature.shape[-1]}")
    before = np.linalg.norm(feature)
    out = feature.copy()
    out[index] = 0.0
    after = np.linalg.norm(out)
    if before == 0.0 or after == 0.0:
        return out
    return out * (before / after)


def load_corpus(directory: str | Path) -> dict[int, str]:
    """Read ``<class_id>.txt`` files from a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigurationError(f"corpus directory not found: {directory}")
    corpus = {}
    for path in sorted(directory.glob("*.txt")):
        if not path.stem.isdigit():
            raise FormatError(f"corpus file name must be '<class_id>.txt': {path}")
        corpus[int(path.stem)] = path.read_text(encoding="utf-8")
    if not corpus:
        raise ConfigurationError(f"no '<class_id>.txt' articles found in {directory}")
    return corpus


def save_corpus(corpus: Mapping[int, str], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for c, text in sorted(corpus.items()):
        (directory / f"{c}.txt").write_text(text, encoding="utf-8")


def save_text_features(features: Mapping[int, np.ndarray], path: str | Path,
                       header: str | None = None) -> None:
    """CSV of ``class_id,v0,...`` rows; floats use ``repr`` so they round-trip."""
    rows = []
    if header:
        rows.append(f"# {header}")
    for c in sorted(features):
        rows.append(",".join([str(c)] + [repr(float(v)) for v in features[c]]))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_text_features(path: str | Path) -> dict[int, np.ndarray]:
    features = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        head, *values = line.split(",")
        try:
            features[int(head)] = np.array([float(v) for v in values])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not features:
        raise FormatError(f"{path}: no text features")
    if len({len(v) for v in features.values()}) != 1:
        raise FormatError(f"{path}: rows have differing lengths")
    return features
