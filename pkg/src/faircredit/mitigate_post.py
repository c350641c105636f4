"""Post-processing mitigation acting on scores, labels and group flags only."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels, metrics
from .metrics import INTERVALS, UndefinedMetricError

logger = logging.getLogger(__name__)

ROC_CONSTRAINTS = ("SPD", "AOD", "EOD")
CEO_COSTS = ("fnr", "fpr", "weighted")

DEFAULT_THRESHOLDS = np.linspace(0.3, 0.7, 10)
DEFAULT_MARGINS = np.linspace(0.01, 0.25, 10)


class NotFittedError(RuntimeError):
    pass


def _check_groups(protected):
    protected = np.asarray(protected, dtype=np.float64)
    if not (protected == 0).any() or not (protected == 1).any():
        raise UndefinedMetricError("empty validation group")
    return protected


# --------------------------------------------------------------------------
# reject option classification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RocPolicy:
    """Critical region ``[threshold - margin, threshold + margin]``.

    Inside it unprivileged rows are labelled favourable and privileged rows
    unfavourable; outside, plain thresholding applies.
    """

    constraint: str = "SPD"
    threshold: float = 0.5
    margin: float = 0.05
    fitted: bool = False
    feasible: bool = True
    balanced_accuracy: float = float("nan")
    metric_value: float = float("nan")

    def __post_init__(self):
        if self.constraint not in ROC_CONSTRAINTS:
            raise ValueError(f"unknown ROC constraint {self.constraint!r}")
        if not 0.0 < self.margin < 0.5:
            raise ValueError("margin must lie strictly inside (0, 0.5)")

    @property
    def theta(self) -> float:
        """Cost ratio implied by the region's upper edge, ``theta / (1 - theta)``."""
        return self.threshold + self.margin


def _constraint_value(counts, constraint):
    rates = metrics.GroupRates.from_confusion(metrics.ConfusionByGroup(counts))
    return {"SPD": metrics.spd, "AOD": metrics.aod, "EOD": metrics.eod}[constraint](rates)


def roc_fit(probabilities, y_true, protected, constraint: str = "SPD",
            thresholds=DEFAULT_THRESHOLDS, margins=DEFAULT_MARGINS) -> RocPolicy:
    """Pick the (threshold, margin) pair with the best balanced accuracy.

    Only pairs whose constraint metric lies strictly inside its fair interval
    qualify; ties prefer the smaller margin. When no pair qualifies, the pair
    closest to the interval is returned with ``feasible=False``.
    """
    if constraint not in ROC_CONSTRAINTS:
        raise ValueError(f"unknown ROC constraint {constraint!r}")
    probs = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.float64)
    protected = _check_groups(protected)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    margins = np.asarray(margins, dtype=np.float64)
    counts = _kernels.roc_scan(probs, y, protected, thresholds, margins)
    lo, hi = INTERVALS[constraint]

    best, best_key = None, None
    fallback, fallback_key = None, None
    for a, t in enumerate(thresholds):
        for b, m in enumerate(margins):
            cm = metrics.ConfusionByGroup(counts[a, b])
            try:
                value = _constraint_value(counts[a, b], constraint)
                bacc = metrics.balanced_accuracy(cm)
            except UndefinedMetricError:
                continue
            if lo < value < hi:
                key = (-bacc, m, abs(t - 0.5))
                if best_key is None or key < best_key:
                    best, best_key = (t, m, bacc, value), key
            else:
                viol = max(lo - value, value - hi)
                key = (viol, -bacc, m)
                if fallback_key is None or key < fallback_key:
                    fallback, fallback_key = (t, m, bacc, value), key
    chosen = best or fallback
    if chosen is None:
        raise UndefinedMetricError("no grid point has defined metrics")
    if best is None:
        logger.warning("reject option: no grid point satisfies %s; using least violation", constraint)
    t, m, bacc, value = chosen
    return RocPolicy(constraint, float(t), float(m), True, best is not None, float(bacc), float(value))


def critical_region(policy: RocPolicy, probabilities) -> np.ndarray:
    probs = np.asarray(probabilities, dtype=np.float64)
    return np.abs(probs - policy.threshold) <= policy.margin


def roc_apply(policy: RocPolicy, probabilities, protected) -> np.ndarray:
    """Relabel with the fitted critical region (closed interval)."""
    if not policy.fitted:
        raise NotFittedError("reject option policy is not fitted")
    probs = np.asarray(probabilities, dtype=np.float64)
    protected = np.asarray(protected, dtype=np.float64)
    labels = (probs >= policy.threshold).astype(float)
    inside = critical_region(policy, probs)
    labels[inside] = (protected[inside] == 0).astype(float)
    return labels


# --------------------------------------------------------------------------
# calibrated equalized odds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CeoPolicy:
    cost: str = "weighted"
    mix_rates: tuple[float, float] = (0.0, 0.0)
    base_rates: tuple[float, float] = (0.5, 0.5)
    fitted: bool = False

    def __post_init__(self):
        if self.cost not in CEO_COSTS:
            raise ValueError(f"unknown cost constraint {self.cost!r}")
        if not all(0.0 <= m <= 1.0 for m in self.mix_rates):
            raise ValueError("mixing rates must lie in [0, 1]")


def generalized_cost(probs, y, cost: str, base_rate: float) -> float:
    """Generalised FNR, FPR, or their prevalence-weighted sum for one group."""
    pos, neg = y == 1, y == 0
    gfnr = float(np.mean(1.0 - probs[pos])) if pos.any() else 0.0
    gfpr = float(np.mean(probs[neg])) if neg.any() else 0.0
    if cost == "fnr":
        return gfnr
    if cost == "fpr":
        return gfpr
    return base_rate * gfnr + (1.0 - base_rate) * gfpr


def mixing_rate(cost_better: float, cost_worse: float, trivial_better: float) -> float:
    """Share of the base-rate predictor that lifts the better group's cost to the worse one's."""
    if cost_worse <= cost_better:
        return 0.0
    denom = trivial_better - cost_better
    if trivial_better == 0:
        raise UndefinedMetricError("zero-cost degenerate group")
    if denom <= 0:
        # mixing toward the base rate would not raise this group's cost
        logger.warning("calibrated odds: base-rate predictor is no costlier; no mixing applied")
        return 0.0
    return float(np.clip((cost_worse - cost_better) / denom, 0.0, 1.0))


def ceo_fit(probabilities, y_true, protected, cost: str = "weighted") -> CeoPolicy:
    """Equalise the chosen generalised cost across groups by mixing.

    The group with the lower cost has its scores blended with its base-rate
    constant predictor; the blend is linear in the score so the cost moves
    linearly to match the other group.
    """
    if cost not in CEO_COSTS:
        raise ValueError(f"unknown cost constraint {cost!r}")
    probs = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.float64)
    protected = _check_groups(protected)
    cal = metrics.calibration_by_group(probs, y, protected)
    if cal.max_gap > 0.2:
        warnings.warn(
            f"scores look poorly calibrated (max reliability gap {cal.max_gap:.2f})",
            RuntimeWarning,
            stacklevel=2,
        )
    base, own, trivial = [], [], []
    for g in (0, 1):
        rows = protected == g
        br = float(y[rows].mean())
        base.append(br)
        own.append(generalized_cost(probs[rows], y[rows], cost, br))
        trivial.append(generalized_cost(np.full(rows.sum(), br), y[rows], cost, br))
    mix = [0.0, 0.0]
    better = int(np.argmin(own))
    worse = 1 - better
    if own[worse] > own[better]:
        mix[better] = mixing_rate(own[better], own[worse], trivial[better])
    return CeoPolicy(cost, tuple(mix), tuple(base), True)


def ceo_apply(policy: CeoPolicy, probabilities, protected) -> np.ndarray:
    """Blend each affected row's score with its group's base rate."""
    if not policy.fitted:
        raise NotFittedError("calibrated equalized odds policy is not fitted")
    probs = np.asarray(probabilities, dtype=np.float64).copy()
    protected = np.asarray(protected, dtype=np.float64)
    for g in (0, 1):
        m = policy.mix_rates[g]
        if m:
            rows = protected == g
            probs[rows] = (1.0 - m) * probs[rows] + m * policy.base_rates[g]
    return probs
