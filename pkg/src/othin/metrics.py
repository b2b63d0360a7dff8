"""Detection metrics: rates at a threshold, optimal threshold, ROC/AUC.

Labels are 1 for anomalies and 0 for inliers; an observation is flagged
when its score strictly exceeds the threshold.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class DetectionMetrics:
    p_d: float
    p_f: float
    detection_error: float
    tau_used: float

    def to_dict(self):
        return dict(self.__dict__)


def _check_classes(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_anom = int((labels == 1).sum())
    n_inl = int((labels == 0).sum())
    if n_anom + n_inl != labels.size:
        raise ValueError("labels must be 0 (inlier) or 1 (anomaly)")
    if n_anom == 0 or n_inl == 0:
        raise ValueError("both classes must be present")
    return scores, labels


def detection_rates(scores, labels, tau):
    """Detection and false-alarm rates of the rule score > tau."""
    scores, labels = _check_classes(scores, labels)
    p_d = float((scores[labels == 1] > tau).mean())
    p_f = float((scores[labels == 0] > tau).mean())
    return DetectionMetrics(p_d, p_f, 1.0 - p_d + p_f, float(tau))


def best_threshold(scores, labels):
    """Threshold minimizing 1 - P_D + P_F by exhaustive scan.

    Candidates are the midpoints of sorted unique scores plus +/-inf;
    ties break toward the larger threshold (fewer flags).
    """
    scores, labels = _check_classes(scores, labels)
    uniq = np.unique(scores)
    candidates = np.concatenate(
        ([-math.inf], (uniq[:-1] + uniq[1:]) / 2.0, [math.inf])
    )
    anom = np.sort(scores[labels == 1])
    inl = np.sort(scores[labels == 0])
    p_d = 1.0 - np.searchsorted(anom, candidates, side="right") / anom.size
    p_f = 1.0 - np.searchsorted(inl, candidates, side="right") / inl.size
    err = 1.0 - p_d + p_f
    best = len(err) - 1 - int(np.argmin(err[::-1]))
    tau = float(candidates[best])
    return tau, DetectionMetrics(float(p_d[best]), float(p_f[best]), float(err[best]), tau)


def roc_curve(scores, labels):
    """Operating points (P_F, P_D) as the threshold sweeps down.

    Returns an (m, 2) array forming a monotone staircase from (0, 0)
    to (1, 1); tied scores collapse into single points.
    """
    scores, labels = _check_classes(scores, labels)
    order = np.argsort(-scores, kind="stable")
    y = np.asarray(labels)[order]
    s = scores[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    last_in_group = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    p_d = tp[last_in_group] / tp[-1]
    p_f = fp[last_in_group] / fp[-1]
    return np.vstack([[0.0, 0.0], np.column_stack([p_f, p_d])])


def auc(points):
    """Trapezoid area under an ROC staircase from roc_curve."""
    points = np.asarray(points, dtype=np.float64)
    trapezoid = getattr(np, "trapezoid", np.trapz)
    return float(trapezoid(points[:, 1], points[:, 0]))


def auc_score(scores, labels):
    return auc(roc_curve(scores, labels))
