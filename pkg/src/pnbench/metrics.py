"""Detection-aware evaluation: success rate, ROC/AUC, joint success rate, EER.

Convention: a sample is flagged *positive* (accepted as natural) when its
uncertainty is strictly below the threshold T.  Natural inputs should be
positive, attacks negative.  ``tp(T)`` is the accepted fraction of natural
inputs.  ``fp(T)`` is the accepted fraction of attack rows, scoring every
row's final iterate.  ``jsr(T)`` additionally drops rows whose generation
failed, so it counts attacks that both succeeded and passed the detector.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError


def _as_success(outcomes):
    if hasattr(outcomes, "success"):
        return np.asarray(outcomes.success, dtype=bool)
    flags = []
    for o in outcomes:
        if hasattr(o, "success"):
            flags.extend(np.atleast_1d(o.success))
        else:
            flags.append(o is not None and o is not False)
    return np.asarray(flags, dtype=bool)


def success_rate(outcomes):
    """Fraction of generation attempts that did not return the failure marker.

    Accepts an :class:`~pnbench.attacks.AttackOutcome`, a sequence of
    outcomes, or a sequence of adversarial inputs with None for failures.
    """
    flags = _as_success(outcomes)
    if flags.size == 0:
        raise ContractError("success rate of an empty attack set")
    return float(flags.mean())


def threshold_grid(*score_sets):
    """Sorted unique scores with -inf and +inf sentinels."""
    scores = np.concatenate([np.asarray(s, dtype=np.float64).ravel() for s in score_sets])
    return np.concatenate(([-np.inf], np.unique(scores), [np.inf]))


def accept_rate(scores, thresholds):
    """Fraction of ``scores`` strictly below each threshold."""
    s = np.sort(np.asarray(scores, dtype=np.float64))
    return np.searchsorted(s, thresholds, side="left") / len(s)


def joint_success_rate(attack_scores, success, threshold):
    """(1/N) * #{rows that succeeded and score below ``threshold``}."""
    scores = np.asarray(attack_scores, dtype=np.float64)
    success = np.asarray(success, dtype=bool)
    if scores.size == 0:
        raise ContractError("joint success rate of an empty attack set")
    t = np.asarray(threshold, dtype=np.float64)
    hits = success[:, None] & (scores[:, None] < t.ravel()[None, :])
    out = hits.sum(axis=0) / len(scores)
    return float(out[0]) if t.ndim == 0 else out.reshape(t.shape)


def two_variable_indicator(score, center, width, success=None):
    """1 where |center - score| < width; failed generations map to 0."""
    if np.any(np.asarray(width) < 0):
        raise ContractError("width must be nonnegative")
    flag = np.abs(center - np.asarray(score, dtype=np.float64)) < width
    if success is not None:
        flag = flag & np.asarray(success, dtype=bool)
    return flag.astype(int) if np.ndim(flag) else int(flag)


def auc_trapezoid(fp, tp):
    """Area under the (fp, tp) curve; both arrays ascend with the threshold."""
    return float(np.sum(np.diff(fp) * (tp[1:] + tp[:-1]) * 0.5))


def auc_pairs(natural_scores, attack_scores):
    """Mann-Whitney statistic P(natural < attack) with ties counted 1/2."""
    a = np.asarray(natural_scores, dtype=np.float64)[:, None]
    b = np.asarray(attack_scores, dtype=np.float64)[None, :]
    return float(np.mean((a < b) + 0.5 * (a == b)))


@dataclass
class DetectionReport:
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    jsr: np.ndarray
    auc: float
    eer_threshold: float
    eer_jsr: float
    success_rate: float

    @property
    def auc_below_half(self):
        """Flag for cells where flipping the detector would do better."""
        return self.auc < 0.5

    def scalars(self):
        return {
            "auc": float(self.auc),
            "auc_below_half": bool(self.auc_below_half),
            "eer_threshold": float(self.eer_threshold),
            "eer_jsr": float(self.eer_jsr),
            "success_rate": float(self.success_rate),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.scalars(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "tp", "fp", "jsr"])
            for row in zip(self.thresholds, self.tp, self.fp, self.jsr):
                w.writerow([repr(float(v)) for v in row])


def roc(natural_scores, attack_scores, attack_success=None):
    """tp, fp and jsr on the merged score grid, plus AUC and the EER point.

    ``attack_success`` defaults to all True (every row is a successful
    attack).  AUC uses the plain fp axis; the EER uses jsr.
    """
    nat = np.asarray(natural_scores, dtype=np.float64).ravel()
    att = np.asarray(attack_scores, dtype=np.float64).ravel()
    if nat.size == 0 or att.size == 0:
        raise ContractError("roc needs at least one natural and one attack score")
    success = np.ones(att.size, dtype=bool) if attack_success is None else np.asarray(attack_success, dtype=bool)
    if success.shape != att.shape:
        raise ContractError("attack_success must align with attack_scores")
    grid = threshold_grid(nat, att)
    tp = accept_rate(nat, grid)
    fp = accept_rate(att, grid)
    jsr = accept_rate(att[success], grid) * success.mean() if success.any() else np.zeros_like(grid)
    eer_t, eer_j = _eer_from_curve(grid, tp, jsr)
    return DetectionReport(grid, tp, fp, jsr, auc_trapezoid(fp, tp), eer_t, eer_j, float(success.mean()))


def _eer_from_curve(grid, tp, jsr):
    """First crossing of jsr(T) and 1 - tp(T), linearly interpolated."""
    gap = jsr - (1.0 - tp)
    i = int(np.argmax(gap >= 0))
    if i == 0:
        return float(grid[0]), float(jsr[0])
    lo, hi = gap[i - 1], gap[i]
    frac = -lo / (hi - lo)
    j = jsr[i - 1] + frac * (jsr[i] - jsr[i - 1])
    t_lo, t_hi = grid[i - 1], grid[i]
    if np.isinf(t_lo) and np.isinf(t_hi):
        t = 0.0
    elif np.isinf(t_lo):
        t = t_hi
    elif np.isinf(t_hi):
        t = t_lo
    else:
        t = t_lo + frac * (t_hi - t_lo)
    return float(t), float(j)


def eer_operating_point(natural_scores, attack_scores, attack_success=None):
    """(threshold, joint success rate) at the equal-error-rate point."""
    r = roc(natural_scores, attack_scores, attack_success)
    return r.eer_threshold, r.eer_jsr
