"""Group fairness, individual fairness, accuracy and profit measures.

Group 0 is the unprivileged group and group 1 the privileged one throughout.
Predictions may be fractional, meaning the expected favourable probability
of a randomised classifier; counts then become expected counts.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels

UNPRIV, PRIV = 0, 1

# open fairness intervals
INTERVALS = {
    "DI": (0.8, 1.25),
    "SPD": (-0.1, 0.1),
    "AOD": (-0.1, 0.1),
    "EOD": (-0.1, 0.1),
}
THEIL_THRESHOLD = 0.15
CSV_COLUMNS = ("processor", "type", "DI", "SPD", "AOD", "EOD", "TI", "BAcc", "P")


class UndefinedMetricError(ValueError):
    """A rate or ratio whose denominator is empty."""


@dataclass(frozen=True)
class ConfusionByGroup:
    """``counts[g] = [TP, FP, TN, FN]`` for group ``g`` (0 unprivileged, 1 privileged)."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.float64)
        if counts.shape != (2, 4) or np.any(counts < 0):
            raise ValueError("counts must be a non-negative (2, 4) array")
        object.__setattr__(self, "counts", counts)

    def group(self, g):
        tp, fp, tn, fn = self.counts[g]
        return tp, fp, tn, fn

    def pooled(self):
        tp, fp, tn, fn = self.counts.sum(axis=0)
        return tp, fp, tn, fn

    def swapped(self) -> "ConfusionByGroup":
        return ConfusionByGroup(self.counts[::-1].copy())


def confusion_by_group(y_true, y_pred, protected, weights=None) -> ConfusionByGroup:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    protected = np.asarray(protected, dtype=np.float64)
    if not (y_true.shape == y_pred.shape == protected.shape):
        raise ValueError("y_true, y_pred and protected must have equal lengths")
    if not np.all((y_true == 0) | (y_true == 1)) or not np.all((protected == 0) | (protected == 1)):
        raise ValueError("labels and protected flags must be binary")
    if np.any((y_pred < 0) | (y_pred > 1)):
        raise ValueError("predictions must lie in [0, 1]")
    if not (protected == 0).any() or not (protected == 1).any():
        raise UndefinedMetricError("empty group")
    w = np.ones_like(y_true) if weights is None else np.asarray(weights, dtype=np.float64)
    return ConfusionByGroup(_kernels.group_confusion(y_true, y_pred, protected, w))


def _ratio(num, den, what):
    if den <= 0:
        raise UndefinedMetricError(f"{what} undefined: empty denominator")
    return num / den


@dataclass(frozen=True)
class GroupRates:
    """Per-group rates; entries are NaN where the denominator is empty."""

    tpr: tuple[float, float]
    fpr: tuple[float, float]
    tnr: tuple[float, float]
    fnr: tuple[float, float]
    acceptance: tuple[float, float]
    base_rate: tuple[float, float]

    @classmethod
    def from_confusion(cls, cm: ConfusionByGroup) -> "GroupRates":
        cols = {k: [] for k in ("tpr", "fpr", "tnr", "fnr", "acceptance", "base_rate")}
        for g in (UNPRIV, PRIV):
            tp, fp, tn, fn = cm.group(g)
            pos, neg, n = tp + fn, fp + tn, tp + fp + tn + fn
            cols["tpr"].append(tp / pos if pos else math.nan)
            cols["fnr"].append(fn / pos if pos else math.nan)
            cols["fpr"].append(fp / neg if neg else math.nan)
            cols["tnr"].append(tn / neg if neg else math.nan)
            cols["acceptance"].append((tp + fp) / n if n else math.nan)
            cols["base_rate"].append(pos / n if n else math.nan)
        return cls(**{k: tuple(v) for k, v in cols.items()})

    def _pair(self, name):
        u, p = getattr(self, name)
        if math.isnan(u) or math.isnan(p):
            raise UndefinedMetricError(f"{name} undefined for a group")
        return u, p


def _rates(x) -> GroupRates:
    return x if isinstance(x, GroupRates) else GroupRates.from_confusion(x)


def spd(rates) -> float:
    """Statistical parity difference: acceptance(unpriv) - acceptance(priv)."""
    u, p = _rates(rates)._pair("acceptance")
    return u - p


def di(rates) -> float:
    """Disparate impact: acceptance(unpriv) / acceptance(priv)."""
    u, p = _rates(rates)._pair("acceptance")
    return _ratio(u, p, "disparate impact")


def aod(rates) -> float:
    """Average odds difference, signed."""
    r = _rates(rates)
    fu, fp = r._pair("fpr")
    tu, tp = r._pair("tpr")
    return 0.5 * ((fu - fp) + (tu - tp))


def eod(rates) -> float:
    """Equal opportunity difference: TPR(unpriv) - TPR(priv)."""
    u, p = _rates(rates)._pair("tpr")
    return u - p


def separation_sp(rates) -> float:
    """Half the absolute sum of the FPR and FNR gaps between groups."""
    r = _rates(rates)
    fu, fp = r._pair("fpr")
    nu, np_ = r._pair("fnr")
    return 0.5 * abs((fu - fp) + (nu - np_))


def theil(y_true, y_pred) -> float:
    """Theil index of the benefits ``b = y_pred - y_true + 1``."""
    b = np.asarray(y_pred, dtype=np.float64) - np.asarray(y_true, dtype=np.float64) + 1.0
    if b.size == 0:
        raise UndefinedMetricError("Theil index of an empty sample")
    mu = b.mean()
    if mu <= 0:
        raise UndefinedMetricError("Theil index undefined: mean benefit is zero")
    r = b / mu
    # 0 * ln 0 = 0
    terms = np.where(r > 0, r * np.log(np.where(r > 0, r, 1.0)), 0.0)
    return float(max(terms.mean(), 0.0))


def discretize(scores, bins: int = 10) -> np.ndarray:
    """Equal-width bin index of each score over [0, 1]."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    scores = np.asarray(scores, dtype=np.float64)
    return np.clip((scores * bins).astype(int), 0, bins - 1)


def _entropy(p) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def mutual_info_independence(score_bins, protected, n_bins: int | None = None) -> float:
    """Plug-in mutual information (nats) between binned scores and group."""
    score_bins = np.asarray(score_bins, dtype=int)
    protected = np.asarray(protected, dtype=int)
    n_bins = int(score_bins.max()) + 1 if n_bins is None else n_bins
    if n_bins < 2:
        raise ValueError("single bin: mutual information needs at least 2 bins")
    joint = np.zeros((2, n_bins))
    np.add.at(joint, (protected, score_bins), 1.0)
    joint /= joint.sum()
    mi = _entropy(joint.sum(axis=1)) + _entropy(joint.sum(axis=0)) - _entropy(joint.ravel())
    return max(mi, 0.0)


@dataclass
class CalibrationTable:
    edges: np.ndarray
    mean_prob: np.ndarray  # (2, bins), NaN where empty
    favorable_rate: np.ndarray
    count: np.ndarray
    max_gap: float
    empty_bins: list[tuple[int, int]] = field(default_factory=list)


def calibration_by_group(probabilities, y_true, protected, bins: int = 10) -> CalibrationTable:
    """Per-group reliability table; empty bins are reported, not fatal."""
    probs = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.float64)
    g = np.asarray(protected, dtype=int)
    idx = discretize(probs, bins)
    count = np.zeros((2, bins))
    psum = np.zeros((2, bins))
    ysum = np.zeros((2, bins))
    np.add.at(count, (g, idx), 1.0)
    np.add.at(psum, (g, idx), probs)
    np.add.at(ysum, (g, idx), y)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_prob = psum / count
        fav = ysum / count
    gaps = np.abs(mean_prob - fav)
    empty = [(int(a), int(b)) for a, b in zip(*np.nonzero(count == 0))]
    return CalibrationTable(
        edges=np.linspace(0, 1, bins + 1),
        mean_prob=mean_prob,
        favorable_rate=fav,
        count=count,
        max_gap=float(np.nanmax(gaps)) if np.isfinite(gaps).any() else math.nan,
        empty_bins=empty,
    )


def balanced_accuracy(cm: ConfusionByGroup) -> float:
    """Mean of pooled sensitivity and specificity."""
    tp, fp, tn, fn = cm.pooled()
    tpr = _ratio(tp, tp + fn, "sensitivity")
    tnr = _ratio(tn, tn + fp, "specificity")
    return 0.5 * (tpr + tnr)


@dataclass(frozen=True)
class ProfitConfig:
    roi: float = 0.34
    lc: float = 0.9

    def __post_init__(self):
        if self.roi <= 0:
            raise ValueError("ROI must be positive")
        if not 0 < self.lc <= 1:
            raise ValueError("loss coefficient must lie in (0, 1]")

    @classmethod
    def from_loan_terms(cls, interest_rate: float, years: float, erc: float, lc: float = 0.9):
        """ROI as interest rate x term x early-repayment coefficient."""
        return cls(roi=interest_rate * years * erc, lc=lc)


def profit(cm: ConfusionByGroup, cfg: ProfitConfig | None = None) -> float:
    """Pooled ``TPR * ROI - FPR * LC``."""
    cfg = cfg or ProfitConfig()
    tp, fp, tn, fn = cm.pooled()
    tpr = _ratio(tp, tp + fn, "TPR")
    fpr = _ratio(fp, fp + tn, "FPR")
    return tpr * cfg.roi - fpr * cfg.lc


@dataclass(frozen=True)
class MetricReport:
    DI: float
    SPD: float
    AOD: float
    EOD: float
    SP: float
    TI: float
    BAcc: float
    P: float
    theil_threshold: float = THEIL_THRESHOLD

    @property
    def verdicts(self) -> dict[str, bool]:
        return fairness_verdicts(self)

    def values(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("theil_threshold")
        return d

    def to_row(self, processor: str, ptype: str) -> list[str]:
        return [processor, ptype] + [_fmt(getattr(self, c)) for c in CSV_COLUMNS[2:]]

    def to_json(self) -> str:
        return json.dumps({"values": self.values(), "verdicts": self.verdicts}, sort_keys=True)


def _fmt(x: float) -> str:
    return "nan" if x is None or math.isnan(x) else f"{x:.6f}"


def _inside(x, lo, hi) -> bool:
    return not math.isnan(x) and lo < x < hi


def fairness_verdicts(report: MetricReport) -> dict[str, bool]:
    """True where a metric sits strictly inside its fair interval."""
    out = {k: _inside(getattr(report, k), *iv) for k, iv in INTERVALS.items()}
    out["TI"] = not math.isnan(report.TI) and 0 <= report.TI < report.theil_threshold
    return out


def _safe(fn, *args) -> float:
    try:
        return float(fn(*args))
    except UndefinedMetricError:
        return math.nan


def evaluate(y_true, y_pred, protected, profit_cfg: ProfitConfig | None = None,
             theil_threshold: float = THEIL_THRESHOLD) -> MetricReport:
    """Every reported measure for one set of predictions.

    Undefined quantities come out as NaN rather than raising.
    """
    cm = confusion_by_group(y_true, y_pred, protected)
    rates = GroupRates.from_confusion(cm)
    return MetricReport(
        DI=_safe(di, rates),
        SPD=_safe(spd, rates),
        AOD=_safe(aod, rates),
        EOD=_safe(eod, rates),
        SP=_safe(separation_sp, rates),
        TI=_safe(theil, y_true, y_pred),
        BAcc=_safe(balanced_accuracy, cm),
        P=_safe(profit, cm, profit_cfg),
        theil_threshold=theil_threshold,
    )
