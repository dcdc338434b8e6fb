"""Retrieval metrics and the seen/unseen evaluation protocol."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigurationError, ContractError, UndefinedMetricError


def _binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ContractError(f"{scores.shape[0]} scores but {labels.shape[0]} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be 0 or 1")
    return scores, labels.astype(bool)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney estimate: P(positive outscores negative), ties counting 1/2."""
    scores, pos = _binary(scores, labels)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(scores, labels) -> float:
    """Trapezoidal area under the precision-recall curve.

    Points are taken at every rank of the descending sort (ties keep input
    order), with (0, precision@1) prepended.
    """
    scores, pos = _binary(scores, labels)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise UndefinedMetricError("PR-AUC needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = np.cumsum(pos[order])
    precision = hits / np.arange(1, len(order) + 1)
    recall = hits / n_pos
    precision = np.concatenate([[precision[0]], precision])
    recall = np.concatenate([[0.0], recall])
    return float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))


def top_k_accuracy(score_matrix, true_labels, k: int, class_ids=None) -> float:
    """Fraction of rows whose true class is among the ``k`` best columns.

    Equal scores are ordered by ascending class id.
    """
    S = np.asarray(score_matrix, dtype=np.float64)
    true_labels = np.asarray(true_labels)
    n, C = S.shape
    class_ids = np.arange(C) if class_ids is None else np.asarray(class_ids)
    if not 1 <= k <= C:
        raise ConfigurationError(f"K={k} must lie in [1, {C}]")
    if n == 0:
        raise ContractError("top-K accuracy needs at least one row")
    col = {int(c): j for j, c in enumerate(class_ids)}
    try:
        true_col = np.array([col[int(l)] for l in true_labels])
    except KeyError as exc:
        raise ContractError(f"true label {exc.args[0]} has no score column") from None
    true_score = S[np.arange(n), true_col][:, None]
    true_id = class_ids[true_col][:, None]
    ahead = (S > true_score) | ((S == true_score) & (class_ids[None, :] < true_id))
    return float(np.mean(ahead.sum(axis=1) < k))


@dataclass
class EvalReport:
    per_class_roc_auc: dict[int, float] = field(default_factory=dict)
    per_class_pr_auc: dict[int, float] = field(default_factory=dict)
    roc_auc_unseen: float | None = None
    roc_auc_seen: float | None = None
    roc_auc_mean: float | None = None
    pr_auc_unseen: float | None = None
    pr_auc_seen: float | None = None
    pr_auc_mean: float | None = None
    top1_unseen: float | None = None
    top1_seen: float | None = None
    top5_unseen: float | None = None
    top5_seen: float | None = None
    unseen_classes: list[int] = field(default_factory=list)
    seen_classes: list[int] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["per_class_roc_auc"] = {str(c): v for c, v in self.per_class_roc_auc.items()}
        out["per_class_pr_auc"] = {str(c): v for c, v in self.per_class_pr_auc.items()}
        return {k: v for k, v in out.items() if v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        data = dict(data)
        data["per_class_roc_auc"] = {int(c): v for c, v in data.get("per_class_roc_auc", {}).items()}
        data["per_class_pr_auc"] = {int(c): v for c, v in data.get("per_class_pr_auc", {}).items()}
        return cls(**data)


SUMMARY_FIELDS = (
    "roc_auc_unseen", "roc_auc_seen", "roc_auc_mean",
    "pr_auc_unseen", "pr_auc_seen", "pr_auc_mean",
    "top1_unseen", "top1_seen", "top5_unseen", "top5_seen",
)


def _mean(values) -> float | None:
    values = list(values)
    return float(np.mean(values)) if values else None


def evaluate_scores(scores: np.ndarray, labels: np.ndarray, seen, unseen,
                    class_ids=None) -> EvalReport:
    """Build a report from a (N_test, C) score matrix of test images.

    For class c the positives are its test images and the negatives are all
    other test images, seen and unseen pooled.
    """
    seen, unseen = [int(c) for c in seen], [int(c) for c in unseen]
    if set(seen) & set(unseen):
        raise ContractError("seen and unseen classes overlap")
    if not seen and not unseen:
        raise ContractError("no classes to evaluate")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    class_ids = np.arange(scores.shape[1]) if class_ids is None else np.asarray(class_ids)
    column = {int(c): j for j, c in enumerate(class_ids)}
    report = EvalReport(unseen_classes=sorted(unseen), seen_classes=sorted(seen))
    for c in sorted(seen + unseen):
        positives = labels == c
        if not positives.any() or positives.all():
            continue
        report.per_class_roc_auc[c] = roc_auc(scores[:, column[c]], positives)
        report.per_class_pr_auc[c] = pr_auc(scores[:, column[c]], positives)

    def group(metric: dict, classes):
        return _mean(metric[c] for c in classes if c in metric)

    report.roc_auc_unseen = group(report.per_class_roc_auc, unseen)
    report.roc_auc_seen = group(report.per_class_roc_auc, seen)
    report.roc_auc_mean = group(report.per_class_roc_auc, seen + unseen)
    report.pr_auc_unseen = group(report.per_class_pr_auc, unseen)
    report.pr_auc_seen = group(report.per_class_pr_auc, seen)
    report.pr_auc_mean = group(report.per_class_pr_auc, seen + unseen)

    k5 = min(5, scores.shape[1])
    for name, classes in (("unseen", unseen), ("seen", seen)):
        rows = np.isin(labels, classes)
        if rows.any():
            setattr(report, f"top1_{name}",
                    top_k_accuracy(scores[rows], labels[rows], 1, class_ids))
            setattr(report, f"top5_{name}",
                    top_k_accuracy(scores[rows], labels[rows], k5, class_ids))
    return report


def evaluate_protocol(model, store, split, texts: np.ndarray) -> EvalReport:
    """Score every test image against every class text and summarize.

    ``model`` is anything with a ``score_store(store, texts)`` method.
    """
    texts = np.asarray(texts, dtype=np.float64)
    classes = np.array(sorted(split.seen + split.unseen), dtype=np.int64)
    test_idx = split.test
    if len(test_idx) == 0:
        raise ContractError("split has no test images")
    test = store.subset(test_idx)
    scores = model.score_store(test, texts[classes])
    report = evaluate_scores(scores, test.labels, split.seen, split.unseen, classes)
    report.meta["seed"] = split.seed
    return report


def mean_report(reports: list[EvalReport]) -> EvalReport:
    """Field-wise average of several reports (cross-validation summary)."""
    if not reports:
        raise ContractError("no reports to average")
    out = EvalReport()
    for name in SUMMARY_FIELDS:
        setattr(out, name, _mean(getattr(r, name) for r in reports if getattr(r, name) is not None))
    out.meta["folds"] = len(reports)
    return out
