"""Evaluation metrics: MAE for regression KPIs, F1/AUROC/APR for boolean ones."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.stats import rankdata


def mae(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    return float(np.mean(np.abs(y_true - y_pred)))


def f1_score(y_true, scores, threshold: float = 0.5) -> float:
    """F1 of the predictions ``scores >= threshold``; 0 when there is no true positive."""
    y = np.asarray(y_true).astype(bool)
    pred = np.asarray(scores, dtype=float) >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def auroc(y_true, scores) -> Optional[float]:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores get their average rank, which counts a tied
    positive/negative pair as one half.  Returns ``None`` when only one
    class is present.
    """
    y = np.asarray(y_true).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(np.asarray(scores, dtype=float), method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def precision_recall_points(y_true, scores):
    """Precision and recall at every distinct score threshold, highest first."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=float)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp, fp = tp[ends], fp[ends]
    precision = tp / (tp + fp)
    recall = tp / max(int(y.sum()), 1)
    return precision, recall


def average_precision(y_true, scores) -> Optional[float]:
    """Area under the precision/recall curve as a step sum.

    Precision is interpolated from the right (the precision at recall r is
    the best precision at any recall >= r).  Returns ``None`` when only one
    class is present.
    """
    y = np.asarray(y_true).astype(bool)
    if y.all() or not y.any():
        return None
    precision, recall = precision_recall_points(y, scores)
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * interp))
