"""Word-sensitivity pseudo-attributes and nearest-image queries."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, UndefinedMetricError
from .evaluation import pr_auc
from .model import ZeroShotModel
from .textfeat import delete_term_rescaled


@dataclass
class SensitivityReport:
    class_id: int
    baseline_pr_auc: float
    drops: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "baseline_pr_auc": self.baseline_pr_auc,
            "drops": [{"term": t, "drop": d} for t, d in self.drops],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        width = max([len("term")] + [len(t) for t, _ in self.drops])
        lines = [
            f"class {self.class_id}  baseline PR-AUC {self.baseline_pr_auc:.4f}",
            f"{'rank':>4}  {'term':<{width}}  {'drop':>9}",
        ]
        for rank, (term, drop) in enumerate(self.drops, 1):
            lines.append(f"{rank:>4}  {term:<{width}}  {drop:>9.4f}")
        return "\n".join(lines)


def word_sensitivity(model: ZeroShotModel, class_id: int, text: np.ndarray, terms, test_store,
                     top: int = 5) -> SensitivityReport:
    """Rank article terms by how much deleting each one lowers the class PR-AUC.

    Each nonzero entry is zeroed in turn and the vector rescaled to its
    original L2 norm; the class is then re-scored against every test image.
    Ties in the drop are broken alphabetically by term.
    """
    text = np.asarray(text, dtype=np.float64)
    if len(terms) != text.shape[0]:
        raise ContractError(f"{len(terms)} terms for a text vector of length {text.shape[0]}")
    positives = test_store.labels == class_id
    if not positives.any():
        raise UndefinedMetricError(f"class {class_id} has no images in the test set")
    present = np.flatnonzero(text)
    variants = np.vstack([text[None, :]] + [delete_term_rescaled(text, i)[None, :] for i in present])
    scores = model.score_store(test_store, variants)
    baseline = pr_auc(scores[:, 0], positives)
    drops = [(terms[i], baseline - pr_auc(scores[:, j + 1], positives))
             for j, i in enumerate(present)]
    drops.sort(key=lambda td: (-td[1], td[0]))
    return SensitivityReport(int(class_id), baseline, drops[:top])


def nearest_images(model: ZeroShotModel, text: np.ndarray, store, count: int,
                   class_id: int | None = None, within_class: bool = False) -> np.ndarray:
    """Image ids ranked by the dot product of predicted fc weights with g_v(x).

    With ``within_class`` only images labelled ``class_id`` are candidates. A
    ``count`` above the candidate pool returns the whole pool.
    """
    if not model.config.uses_fc:
        raise ContractError("nearest-image queries need a model with an fc branch")
    w = model.fc_weights(np.asarray(text, dtype=np.float64)[None, :]).data[0]
    scores = model.visual_embed(store.x.astype(np.float64)).data @ w
    order = np.argsort(-scores, kind="stable")
    if within_class:
        if class_id is None:
            raise ContractError("within-class queries need a class id")
        order = order[store.labels[order] == class_id]
    return store.ids[order[: max(count, 0)]]
