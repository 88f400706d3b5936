"""Frame-level average precision and mean average precision.

Frames are pooled across all test videos per class before ranking
(dataset-level AP). AP is the exact precision-at-positive-rank form: sum of
precision at each positive, in descending score order, divided by the
positive count; no interpolation. Ties are broken by a stable sort on
(-score, video order, frame order), so reports are deterministic. Classes
with no positive frame are excluded from the mean and listed in the report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import ModelState, predict_probabilities

__all__ = ["EvalReport", "average_precision", "evaluate", "PROTOCOL"]

PROTOCOL = {
    "ap": "exact precision-at-positive-rank (no interpolation)",
    "pooling": "frames pooled across all videos per class before ranking",
    "ties": "stable sort on (-score, video order, frame order)",
}


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP of one ranking; raises ValueError when there is no positive."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape or scores.size == 0:
        raise ValueError("scores and labels must be equal-length and nonempty")
    positives = int(labels.sum())
    if positives == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order].astype(np.float64)
    cum = np.cumsum(ranked)
    ranks = np.arange(1, ranked.size + 1)
    return float((cum[ranked == 1] / ranks[ranked == 1]).sum() / positives)


@dataclass
class EvalReport:
    class_names: list[str]
    ap_per_class: list  # float per evaluated class, None per excluded class
    mean_ap: float
    evaluated_classes: list[int]
    excluded_classes: list[int]
    protocol: dict = field(default_factory=lambda: dict(PROTOCOL))

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": 1,
                "mean_ap": self.mean_ap,
                "ap_per_class": {
                    name: ap
                    for name, ap in zip(self.class_names, self.ap_per_class)
                },
                "evaluated_classes": [self.class_names[i] for i in self.evaluated_classes],
                "excluded_classes": [self.class_names[i] for i in self.excluded_classes],
                "protocol": self.protocol,
            },
            indent=1,
        )

    def format_table(self) -> str:
        width = max((len(n) for n in self.class_names), default=5)
        lines = [f"{'class':<{width}}  AP"]
        for i, (name, ap) in enumerate(zip(self.class_names, self.ap_per_class)):
            shown = f"{ap:.4f}" if ap is not None else "(no positives)"
            lines.append(f"{name:<{width}}  {shown}")
        lines.append(f"{'mAP':<{width}}  {self.mean_ap:.4f}")
        return "\n".join(lines)

    def mean_over(self, class_indices) -> float:
        vals = [self.ap_per_class[i] for i in class_indices]
        if any(v is None for v in vals):
            raise ValueError("requested classes include one with no positives")
        return float(np.mean(vals))


def evaluate(state: ModelState, dataset: Dataset) -> EvalReport:
    """Score every frame of every video (no dropout) and report per-class AP."""
    if (state.feature_dim != dataset.feature_dim
            or state.num_classes != dataset.num_classes):
        raise ValueError(
            f"model dims (D={state.feature_dim}, C={state.num_classes}) do not match "
            f"dataset (D={dataset.feature_dim}, C={dataset.num_classes})"
        )
    scores = []
    labels = []
    for video in dataset.videos:
        scores.append(predict_probabilities(state, video.features))
        labels.append(video.labels)
    all_scores = np.concatenate(scores, axis=0)
    all_labels = np.concatenate(labels, axis=0)

    ap_per_class: list = []
    evaluated, excluded = [], []
    for c in range(dataset.num_classes):
        if all_labels[:, c].sum() == 0:
            ap_per_class.append(None)
            excluded.append(c)
        else:
            ap_per_class.append(average_precision(all_scores[:, c], all_labels[:, c]))
            evaluated.append(c)
    mean_ap = float(np.mean([ap_per_class[c] for c in evaluated])) if evaluated else 0.0
    return EvalReport(
        class_names=list(dataset.class_names),
        ap_per_class=ap_per_class,
        mean_ap=mean_ap,
        evaluated_classes=evaluated,
        excluded_classes=excluded,
    )
