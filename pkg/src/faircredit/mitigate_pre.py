"""Pre-processing mitigation: reweighing, fair representations, distribution repair."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax

from .dataset import DataError, TabularDataset

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# reweighing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReweighingMap:
    """Weight multiplier per (group, class) cell, indexed ``weights[group][label]``."""

    weights: np.ndarray

    def __call__(self, protected, labels) -> np.ndarray:
        g = np.asarray(protected, dtype=int)
        c = np.asarray(labels, dtype=int)
        return self.weights[g, c]


def reweighing_map(ds: TabularDataset) -> ReweighingMap:
    """Expected over observed joint probability of each (group, class) cell.

    Probabilities are computed from the current instance weights.
    """
    w = ds.weights
    total = w.sum()
    out = np.empty((2, 2))
    for g in (0, 1):
        in_g = ds.protected == g
        for c in (0, 1):
            in_c = ds.labels == c
            observed = w[in_g & in_c].sum() / total
            if observed == 0:
                raise DataError(f"empty (group={g}, class={c}) cell: reweighing undefined")
            expected = (w[in_g].sum() / total) * (w[in_c].sum() / total)
            out[g, c] = expected / observed
    return ReweighingMap(out)


def reweigh(ds: TabularDataset) -> TabularDataset:
    """Copy of ``ds`` whose weights make group and class independent."""
    rmap = reweighing_map(ds)
    return ds.with_weights(ds.weights * rmap(ds.protected, ds.labels))


# --------------------------------------------------------------------------
# learning fair representations
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LfrModel:
    """Prototype encoder.

    ``prototypes`` live in standardised feature space (see ``mean``/``scale``);
    ``w`` is each prototype's favourable probability.
    """

    prototypes: np.ndarray
    w: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    Az: float
    Ax: float
    Ay: float
    threshold: float = 0.5
    temperature: float = 1.0
    loss_history: np.ndarray = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.prototypes.shape[0]

    def prototypes_raw(self) -> np.ndarray:
        return self.prototypes * self.scale + self.mean


def _lfr_memberships(Xs, V, temperature):
    d2 = (Xs * Xs).sum(1)[:, None] - 2.0 * Xs @ V.T + (V * V).sum(1)[None, :]
    return np.exp(log_softmax(-np.maximum(d2, 0.0) / temperature, axis=1))


def memberships(model: LfrModel, X) -> np.ndarray:
    """Soft assignment of each row to the prototypes (rows sum to 1)."""
    Xs = (np.asarray(X, dtype=np.float64) - model.mean) / model.scale
    return _lfr_memberships(Xs, model.prototypes, model.temperature)


_CLIP = 1e-8
SMOOTH = 1e-3


def lfr_objective(V, u, Xs, y, s, Az, Ax, Ay, temperature=1.0, with_grad=True, smooth=SMOOTH):
    """Weighted LFR loss ``Az*Lz + Ax*Lx + Ay*Ly`` and its gradient in (V, u).

    ``Lz`` sums the absolute gaps in mean membership between groups,
    ``Lx`` is the mean squared reconstruction error per entry and ``Ly`` the
    mean cross-entropy of the prototype-mixture prediction. Each absolute
    value is smoothed to ``sqrt(gap^2 + smooth^2) - smooth`` so that descent
    does not stall at the kink; ``smooth=0`` gives the exact form.
    """
    n, d = Xs.shape
    M = _lfr_memberships(Xs, V, temperature)
    w = expit(u)
    Xhat = M @ V
    yhat = np.clip(M @ w, _CLIP, 1 - _CLIP)
    priv = s == 1
    n1, n0 = priv.sum(), (~priv).sum()
    gap = M[priv].mean(0) - M[~priv].mean(0)

    Lx = np.mean((Xs - Xhat) ** 2)
    Ly = -np.mean(y * np.log(yhat) + (1 - y) * np.log(1 - yhat))
    soft = np.sqrt(gap * gap + smooth * smooth)
    Lz = (soft - smooth).sum()
    loss = Az * Lz + Ax * Lx + Ay * Ly
    if not with_grad:
        return loss, (Lz, Lx, Ly)

    G_xhat = -2.0 * Ax * (Xs - Xhat) / (n * d)
    dyhat = -Ay * (y / yhat - (1 - y) / (1 - yhat)) / n
    dyhat = np.where((M @ w > _CLIP) & (M @ w < 1 - _CLIP), dyhat, 0.0)
    G_M = G_xhat @ V.T + np.outer(dyhat, w)
    dgap = gap / soft if smooth > 0 else np.sign(gap)
    G_M += Az * dgap[None, :] * np.where(priv, 1.0 / n1, -1.0 / n0)[:, None]
    gV = M.T @ G_xhat
    gu = (M.T @ dyhat) * w * (1 - w)

    # softmax over -dist/T
    G_Z = M * (G_M - (G_M * M).sum(1, keepdims=True))
    G_D = -G_Z / temperature
    gV += 2.0 * (G_D.sum(0)[:, None] * V - G_D.T @ Xs)
    return loss, (Lz, Lx, Ly), gV, gu


def lfr_fit(train: TabularDataset, k: int = 10, Az: float = 50.0, Ax: float = 0.01,
            Ay: float = 1.0, threshold: float = 0.5, seed: int = 0, max_iter: int = 500,
            lr: float = 1.0, temperature: float = 1.0, tol: float = 1e-9) -> LfrModel:
    """Fit prototypes by gradient descent with backtracking.

    A step is only taken when it does not increase the loss, so the recorded
    history is non-increasing. Prototypes start at randomly drawn training rows.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if min(Az, Ax, Ay) < 0:
        raise ValueError("loss weights must be non-negative")
    X = train.X
    mean = X.mean(0)
    scale = X.std(0)
    scale[scale == 0] = 1.0
    Xs = (X - mean) / scale
    y, s = train.labels, train.protected
    rng = np.random.default_rng(seed)
    V = Xs[rng.choice(len(Xs), size=k, replace=k > len(Xs))].copy()
    u = np.zeros(k)

    loss, _, gV, gu = lfr_objective(V, u, Xs, y, s, Az, Ax, Ay, temperature)
    history = [loss]
    step = lr
    for _ in range(max_iter):
        if not np.isfinite(loss):
            raise FloatingPointError("LFR optimisation diverged")
        accepted = False
        for _ in range(40):
            V_new, u_new = V - step * gV, u - step * gu
            new = lfr_objective(V_new, u_new, Xs, y, s, Az, Ax, Ay, temperature, with_grad=False)[0]
            if np.isfinite(new) and new <= loss:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = loss - new
        V, u = V_new, u_new
        loss, _, gV, gu = lfr_objective(V, u, Xs, y, s, Az, Ax, Ay, temperature)
        history.append(loss)
        step *= 1.5
        if improvement < tol * max(1.0, abs(loss)):
            break
    return LfrModel(
        prototypes=V, w=expit(u), mean=mean, scale=scale, Az=Az, Ax=Ax, Ay=Ay,
        threshold=threshold, temperature=temperature, loss_history=np.asarray(history),
    )


def lfr_transform(model: LfrModel, ds: TabularDataset, relabel: bool = False) -> TabularDataset:
    """Replace features by their prototype reconstruction (original units).

    With ``relabel`` the labels become the encoder's thresholded predictions.
    """
    if ds.n_features != model.prototypes.shape[1]:
        raise ValueError("dimension mismatch between model and dataset")
    M = memberships(model, ds.X)
    X_new = M @ model.prototypes_raw()
    out = ds.with_features(X_new)
    if relabel:
        out = out.with_labels((M @ model.w >= model.threshold).astype(float))
    return out


def lfr_predict_proba(model: LfrModel, X) -> np.ndarray:
    return memberships(model, X) @ model.w


# --------------------------------------------------------------------------
# disparate impact remover
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureRepair:
    """Group-conditional quantile functions of one numeric feature."""

    column: int
    # per group: sorted distinct values and their mid-rank CDF positions
    values: tuple[np.ndarray, np.ndarray]
    positions: tuple[np.ndarray, np.ndarray]

    def quantile(self, g, q):
        return np.interp(q, self.positions[g], self.values[g])

    def cdf(self, g, x):
        return np.interp(x, self.values[g], self.positions[g])

    def target(self, q):
        # pointwise median of the group quantile functions
        return np.median(np.vstack([self.quantile(0, q), self.quantile(1, q)]), axis=0)


@dataclass(frozen=True, eq=False)
class RepairPlan:
    level: float
    features: list[FeatureRepair]


def _midrank_positions(x):
    """Distinct sorted values with mid-rank plotting positions ((rank+0.5)/n)."""
    xs = np.sort(x)
    vals, first, counts = np.unique(xs, return_index=True, return_counts=True)
    mid = first + (counts - 1) / 2.0
    return vals, (mid + 0.5) / len(xs)


def dir_fit(ds: TabularDataset, level: float = 1.0) -> RepairPlan:
    """Learn per-group quantile maps for every numeric feature of ``ds``."""
    if not 0.0 <= level <= 1.0:
        raise ValueError("repair level must lie in [0, 1]")
    feats = []
    for j in np.flatnonzero(ds.numeric):
        vals, pos = [], []
        for g in (0, 1):
            col = ds.X[ds.protected == g, j]
            if col.size == 0:
                raise DataError("distribution repair needs both groups")
            v, p = _midrank_positions(col)
            vals.append(v)
            pos.append(p)
        feats.append(FeatureRepair(column=int(j), values=tuple(vals), positions=tuple(pos)))
    return RepairPlan(level=float(level), features=feats)


def dir_apply(plan: RepairPlan, ds: TabularDataset) -> TabularDataset:
    """Move each numeric value a fraction ``level`` toward the median distribution.

    A value's quantile is read from its own group's fitted distribution, so
    within-group order is preserved. Labels and protected flags are untouched.
    """
    if plan.level == 0.0:
        return ds
    X = ds.X.copy()
    for fr in plan.features:
        for g in (0, 1):
            rows = ds.protected == g
            x = ds.X[rows, fr.column]
            q = fr.cdf(g, x)
            X[rows, fr.column] = (1.0 - plan.level) * x + plan.level * fr.target(q)
    return ds.with_features(X)


def dir_repair(ds: TabularDataset, level: float = 1.0) -> TabularDataset:
    """Repair ``ds`` using quantile maps learned from ``ds`` itself."""
    return dir_apply(dir_fit(ds, level), ds)
