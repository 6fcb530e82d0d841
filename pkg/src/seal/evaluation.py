"""Clustering-accuracy evaluation with optimal cluster-to-class matching.

Accuracy is the matched fraction under the maximum-weight one-to-one
assignment between predicted clusters and true classes, solved on the
full prediction set and then reused to decompose accuracy over known
("old") and novel ("new") classes. Consistency diagnostics measure how
often the predicted fine class's ancestor agrees with the predicted
coarse class at each level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError
from .hierarchy import HierarchySpec, level_map


def hungarian_acc(y_true, y_pred, num_classes: int) -> tuple[float, dict[int, int]]:
    """Clustering accuracy under the optimal one-to-one assignment.

    Builds the num_classes x num_classes contingency matrix (padded with
    zero rows/columns when either side uses fewer ids, which covers the
    estimated-class-count case) and solves the maximum-weight matching.
    Returns (accuracy, {predicted cluster -> true class}).
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise InputError("empty label sequences")
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise InputError(f"label shapes differ: {y_true.shape} vs {y_pred.shape}")
    if y_true.min() < 0 or y_pred.min() < 0:
        raise InputError("labels must be non-negative")
    if max(y_true.max(), y_pred.max()) >= num_classes:
        raise InputError(
            f"labels exceed num_classes={num_classes}: "
            f"max true {y_true.max()}, max pred {y_pred.max()}"
        )
    contingency = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(contingency, (y_pred, y_true), 1)
    rows, cols = linear_sum_assignment(contingency, maximize=True)
    assignment = {int(r): int(c) for r, c in zip(rows, cols)}
    matched = contingency[rows, cols].sum()
    return float(matched) / y_true.size, assignment


def split_acc(
    y_true, y_pred, old_classes, assignment: dict[int, int]
) -> tuple[float | None, float | None]:
    """Old/New accuracy decomposition under one shared assignment.

    Old restricts to samples whose true class is in old_classes, New to
    the complement; an empty subset reports None. The assignment must
    come from hungarian_acc over the same predictions.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    missing = set(np.unique(y_pred)) - set(assignment)
    if missing:
        raise InputError(f"assignment missing predicted clusters {sorted(missing)}")
    mapped = np.array([assignment[int(c)] for c in y_pred], dtype=np.int64)
    hits = mapped == y_true
    old_mask = np.isin(y_true, sorted(old_classes))
    acc_old = float(hits[old_mask].mean()) if old_mask.any() else None
    acc_new = float(hits[~old_mask].mean()) if (~old_mask).any() else None
    return acc_old, acc_new


def consistency_rate(pred_fine, pred_levels, spec: HierarchySpec) -> dict[int, float]:
    """Per-level agreement between coarse predictions and the ancestors
    of the fine predictions: {level h: rate} for h < H. Empty for H = 1."""
    pred_fine = np.asarray(pred_fine, dtype=np.int64)
    rates: dict[int, float] = {}
    for h in range(1, spec.levels):
        col = np.asarray(pred_levels[h - 1], dtype=np.int64)
        if col.shape != pred_fine.shape:
            raise InputError(
                f"level {h} predictions have shape {col.shape}, expected {pred_fine.shape}"
            )
        ancestors = level_map(spec, h)[pred_fine]
        rates[h] = float((ancestors == col).mean())
    return rates


@dataclass(frozen=True)
class EvalReport:
    """All/Old/New accuracy (None where the subset is empty), the
    cluster-to-class assignment, and fine-coarse consistency rates."""

    acc_all: float
    acc_old: float | None
    acc_new: float | None
    assignment: dict[int, int] = field(compare=False)
    consistency: dict[int, float] = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        return {
            "all": self.acc_all,
            "old": self.acc_old,
            "new": self.acc_new,
            "consistency": {str(h): r for h, r in self.consistency.items()},
        }


def evaluate_predictions(
    true_labels: np.ndarray,
    pred_labels: np.ndarray,
    spec: HierarchySpec,
    old_fine_classes,
    reassign_subsets: bool = False,
) -> dict[int, EvalReport]:
    """Full per-level evaluation of an (N, H) prediction matrix against
    an (N, H) truth matrix.

    Old classes at coarse levels are the ancestors of the old fine
    classes. reassign_subsets re-solves the matching inside each subset
    (diagnostics only; the headline numbers share one assignment).
    """
    true_labels = np.asarray(true_labels, dtype=np.int64)
    pred_labels = np.asarray(pred_labels, dtype=np.int64)
    if true_labels.shape != pred_labels.shape or true_labels.ndim != 2:
        raise InputError("truth and prediction matrices must share an (N, H) shape")
    if true_labels.shape[1] != spec.levels:
        raise InputError(
            f"expected {spec.levels} label columns, got {true_labels.shape[1]}"
        )
    old_fine = sorted(int(c) for c in old_fine_classes)
    reports: dict[int, EvalReport] = {}
    for h in range(1, spec.levels + 1):
        n_h = spec.counts[h - 1]
        acc, assignment = hungarian_acc(true_labels[:, h - 1], pred_labels[:, h - 1], n_h)
        old_h = set(level_map(spec, h)[old_fine]) if old_fine else set()
        if reassign_subsets:
            acc_old, acc_new = _reassigned_split(
                true_labels[:, h - 1], pred_labels[:, h - 1], old_h, n_h
            )
        else:
            acc_old, acc_new = split_acc(
                true_labels[:, h - 1], pred_labels[:, h - 1], old_h, assignment
            )
        consistency = (
            consistency_rate(
                pred_labels[:, -1], [pred_labels[:, k] for k in range(spec.levels - 1)], spec
            )
            if h == spec.levels
            else {}
        )
        reports[h] = EvalReport(
            acc_all=acc,
            acc_old=acc_old,
            acc_new=acc_new,
            assignment=assignment,
            consistency=consistency,
        )
    return reports


def _reassigned_split(y_true, y_pred, old_classes, num_classes):
    """Diagnostic variant: solve a fresh assignment inside each subset."""
    old_mask = np.isin(y_true, sorted(old_classes))
    out = []
    for mask in (old_mask, ~old_mask):
        if mask.any():
            acc, _ = hungarian_acc(y_true[mask], y_pred[mask], num_classes)
            out.append(acc)
        else:
            out.append(None)
    return tuple(out)
