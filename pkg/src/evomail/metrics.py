"""Classification metrics plus the structured temporal consistency score.

AUC uses the rank statistic with midranks for ties; Precision@K is the
true-spam fraction among the K highest scores; STC is the mean Jaccard
overlap of evidence-path node sets for the same campaign across
consecutive checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyInput, InsufficientCheckpoints


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    precision_at_k: dict[int, float] = field(default_factory=dict)
    stc: Optional[float] = None

    def as_dict(self) -> dict:
        out = {"accuracy": self.accuracy, "precision": self.precision,
               "recall": self.recall, "f1": self.f1, "auc": self.auc,
               "precision_at_k": {str(k): v for k, v in self.precision_at_k.items()}}
        if self.stc is not None:
            out["stc"] = self.stc
        return out


def f1_score(labels, preds) -> float:
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)  # midranks for ties
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def precision_at_k(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    if k <= 0:
        return 0.0
    order = sorted(range(scores.size), key=lambda i: (-scores[i], i))
    top = order[: min(k, scores.size)]
    return float(np.mean([labels[i] == 1 for i in top]))


def classification_metrics(scores, labels, threshold: float = 0.5,
                           ks: Sequence[int] = ()) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0 or scores.size != labels.size:
        raise EmptyInput(f"{scores.size} scores vs {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise EmptyInput("labels must be 0/1")
    preds = (scores >= threshold).astype(int)
    tp = int(((preds == 1) & (labels == 1)).sum())
    fp = int(((preds == 1) & (labels == 0)).sum())
    fn = int(((preds == 0) & (labels == 1)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(
        accuracy=float((preds == labels).mean()),
        precision=precision, recall=recall, f1=f1,
        auc=auc_score(scores, labels),
        precision_at_k={int(k): precision_at_k(scores, labels, int(k)) for k in ks},
    )


def _path_node_set(path) -> frozenset:
    return frozenset((step.node_kind, step.node_id) for step in path.steps)


def stc_metric(paths_by_checkpoint: Sequence[Mapping[str, object]]) -> float:
    """Mean Jaccard overlap of per-campaign evidence paths across consecutive
    checkpoints; campaigns seen at only one checkpoint are skipped."""
    if len(paths_by_checkpoint) < 2:
        raise InsufficientCheckpoints(
            f"need >= 2 checkpoints, got {len(paths_by_checkpoint)}")
    overlaps: list[float] = []
    for prev, curr in zip(paths_by_checkpoint, paths_by_checkpoint[1:]):
        for campaign in prev.keys() & curr.keys():
            a = _path_node_set(prev[campaign])
            b = _path_node_set(curr[campaign])
            union = a | b
            overlaps.append(len(a & b) / len(union) if union else 1.0)
    return float(np.mean(overlaps)) if overlaps else 0.0
