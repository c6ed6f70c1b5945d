"""Group-activity evaluation metrics.

Single-label protocols report overall accuracy (MCA), mean per-class accuracy
(MPCA), and accuracy after merging confusable class pairs (merged MCA).  The
multi-label protocol reports sample-averaged precision/recall/F1 over
predicted vs. ground-truth label sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    """Inputs violated a metric precondition."""


@dataclass
class EvalReport:
    """All metrics for one evaluation run, plus per-class diagnostics."""

    sample_count: int
    mca: float | None = None
    mpca: float | None = None
    merged_mca: float | None = None
    p_g: float | None = None
    r_g: float | None = None
    f_g: float | None = None
    per_class_accuracy: dict[int, float] = field(default_factory=dict)
    confusion_matrix: list[list[int]] | None = None

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "mca": self.mca,
            "mpca": self.mpca,
            "merged_mca": self.merged_mca,
            "p_g": self.p_g,
            "r_g": self.r_g,
            "f_g": self.f_g,
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
            "confusion_matrix": self.confusion_matrix,
        }


def _check_paired(preds, gts) -> None:
    if len(preds) != len(gts):
        raise MetricError(f"length mismatch: {len(preds)} predictions vs {len(gts)} labels")
    if len(gts) == 0:
        raise MetricError("empty input")


def mca(preds: list[int], gts: list[int]) -> float:
    """Fraction of exactly correct predictions."""
    _check_paired(preds, gts)
    return float(np.mean([p == g for p, g in zip(preds, gts)]))


def mpca(preds: list[int], gts: list[int], num_classes: int) -> float:
    """Mean of per-class recalls over classes with support > 0."""
    _check_paired(preds, gts)
    gts_arr = np.asarray(gts)
    preds_arr = np.asarray(preds)
    if (gts_arr >= num_classes).any() or (gts_arr < 0).any():
        raise MetricError("ground-truth class id out of range")
    recalls = []
    for c in range(num_classes):
        mask = gts_arr == c
        if mask.sum() == 0:
            continue  # zero-support classes have undefined recall
        recalls.append(float((preds_arr[mask] == c).mean()))
    if not recalls:
        raise MetricError("no class has support > 0")
    return sum(recalls) / len(recalls)


def merged_mca(preds: list[int], gts: list[int], merge_map: dict[int, int]) -> float:
    """MCA after mapping both predictions and labels through ``merge_map``."""
    _check_paired(preds, gts)
    for label in list(preds) + list(gts):
        if label not in merge_map:
            raise MetricError(f"label {label} not covered by merge_map")
    return mca([merge_map[p] for p in preds], [merge_map[g] for g in gts])


def group_prf(
    pred_sets: list[set[int]], gt_sets: list[set[int]], micro: bool = False
) -> tuple[float, float, float]:
    """Multi-label precision/recall/F1 over label sets.

    Per sample: P = |pred ∩ gt| / |pred| (0 for empty predictions),
    R = |pred ∩ gt| / |gt|, F = 2PR/(P+R) (0 when P + R = 0); the reported
    numbers are sample averages.  ``micro=True`` instead pools intersection
    and set sizes over all samples before computing the three scores.
    """
    _check_paired(pred_sets, gt_sets)
    for i, gt in enumerate(gt_sets):
        if len(gt) == 0:
            raise MetricError(f"ground-truth set at index {i} is empty")

    if micro:
        inter = sum(len(set(p) & set(g)) for p, g in zip(pred_sets, gt_sets))
        n_pred = sum(len(p) for p in pred_sets)
        n_gt = sum(len(g) for g in gt_sets)
        p = inter / n_pred if n_pred else 0.0
        r = inter / n_gt
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return (float(p), float(r), float(f))

    ps, rs, fs = [], [], []
    for pred, gt in zip(pred_sets, gt_sets):
        pred, gt = set(pred), set(gt)
        inter = len(pred & gt)
        p = inter / len(pred) if pred else 0.0
        r = inter / len(gt)
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        ps.append(p)
        rs.append(r)
        fs.append(f)
    n = len(ps)
    return (sum(ps) / n, sum(rs) / n, sum(fs) / n)


def confusion(preds: list[int], gts: list[int], num_classes: int) -> np.ndarray:
    """Confusion matrix with rows = ground truth, columns = prediction."""
    _check_paired(preds, gts)
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(preds, gts):
        mat[g, p] += 1
    return mat


def evaluate_single_label(
    preds: list[int],
    gts: list[int],
    num_classes: int,
    merge_map: dict[int, int] | None = None,
) -> EvalReport:
    """Full single-label report: MCA, MPCA, optional merged MCA, per-class table."""
    mat = confusion(preds, gts, num_classes)
    per_class = {
        c: float(mat[c, c] / mat[c].sum()) for c in range(num_classes) if mat[c].sum() > 0
    }
    return EvalReport(
        sample_count=len(gts),
        mca=mca(preds, gts),
        mpca=mpca(preds, gts, num_classes),
        merged_mca=merged_mca(preds, gts, merge_map) if merge_map is not None else None,
        per_class_accuracy=per_class,
        confusion_matrix=mat.tolist(),
    )


def evaluate_multi_label(pred_sets: list[set[int]], gt_sets: list[set[int]]) -> EvalReport:
    """Full multi-label report: sample-averaged P/R/F1."""
    p, r, f = group_prf(pred_sets, gt_sets)
    return EvalReport(sample_count=len(gt_sets), p_g=p, r_g=r, f_g=f)
