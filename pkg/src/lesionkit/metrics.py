"""Evaluation suite: confusion-based segmentation metrics, ROC/AUC from a
threshold sweep, and all-points average precision.

Zero-denominator conventions (empty class, empty union) return 1.0: an empty
prediction of an empty target is perfect agreement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METRIC_KEYS = ("AC", "JA", "DI", "SE", "SP")


@dataclass(frozen=True)
class ConfusionCounts:
    n_tp: int
    n_tn: int
    n_fp: int
    n_fn: int

    def __post_init__(self):
        for name in ("n_tp", "n_tn", "n_fp", "n_fn"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.n_tp + self.n_tn + self.n_fp + self.n_fn


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Per-pixel tally of a predicted mask against ground truth."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.dtype != bool or gt.dtype != bool:
        raise ValueError("masks must be boolean")
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return ConfusionCounts(
        n_tp=int(np.count_nonzero(pred & gt)),
        n_tn=int(np.count_nonzero(~pred & ~gt)),
        n_fp=int(np.count_nonzero(pred & ~gt)),
        n_fn=int(np.count_nonzero(~pred & gt)),
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 1.0


def seg_metrics(c: ConfusionCounts) -> dict[str, float]:
    """Accuracy, Jaccard, Dice, sensitivity, specificity from raw counts."""
    return {
        "AC": _ratio(c.n_tp + c.n_tn, c.total),
        "JA": _ratio(c.n_tp, c.n_tp + c.n_fn + c.n_fp),
        "DI": _ratio(2 * c.n_tp, 2 * c.n_tp + c.n_fn + c.n_fp),
        "SE": _ratio(c.n_tp, c.n_tp + c.n_fn),
        "SP": _ratio(c.n_tn, c.n_tn + c.n_fp),
    }


def false_positive_rate(c: ConfusionCounts) -> float:
    """FPR = 1 - SP."""
    return 1.0 - seg_metrics(c)["SP"]


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> tuple[list[tuple[float, float]], float]:
    """ROC curve from a sweep over the distinct score thresholds, plus its
    trapezoidal area (equal to the pairwise-ordering statistic, ties half).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-d arrays")
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite scores")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    curve = [(0.0, 0.0)]
    tp = fp = 0
    for i in range(scores.size):
        tp += int(sorted_labels[i])
        fp += int(not sorted_labels[i])
        last = i + 1 == scores.size
        if last or sorted_scores[i + 1] != sorted_scores[i]:  # close the tie group
            curve.append((fp / n_neg, tp / n_pos))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(curve, curve[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return curve, auc


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean of precision-at-rank over the positive items (all-points AP).

    Ties are broken by descending score, then stable input order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-d arrays")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
            total += hits / rank
    return total / n_pos


def mean_metrics(per_item: list[dict[str, float]]) -> dict[str, float]:
    """Key-wise mean in fixed list order; all dicts must share keys."""
    if not per_item:
        raise ValueError("no items to average")
    keys = list(per_item[0])
    for d in per_item[1:]:
        if list(d) != keys:
            raise ValueError("inconsistent metric keys across items")
    return {k: sum(d[k] for d in per_item) / len(per_item) for k in keys}


def dataset_report(
    per_item: dict[str, dict[str, float]], ranking_metric: str
) -> dict:
    """JSON-shaped summary: per-item metrics, dataset means, ranking column."""
    items = list(per_item.values())
    means = mean_metrics(items)
    if ranking_metric not in means:
        raise ValueError(f"ranking metric {ranking_metric!r} not among {list(means)}")
    return {
        "items": per_item,
        "means": means,
        "ranking": {"metric": ranking_metric, "value": means[ranking_metric]},
    }
