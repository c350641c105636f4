"""In-processing mitigation: classifiers trained under fairness constraints."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import classifier
from .classifier import LogisticModel, TrainConfig, sigmoid
from .dataset import DataError, TabularDataset

logger = logging.getLogger(__name__)

CONSTRAINTS = (
    "demographic_parity",
    "equalized_odds",
    "tpr_difference",
    "error_rate_ratio",
    "bounded_group_loss",
)
EXPGRAD_CONSTRAINTS = CONSTRAINTS[:4]
GRID_CONSTRAINTS = ("demographic_parity", "bounded_group_loss")

_ALIASES = {
    "dp": "demographic_parity",
    "eo": "equalized_odds",
    "tpr": "tpr_difference",
    "err": "error_rate_ratio",
    "bgl": "bounded_group_loss",
}


def constraint_kind(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in CONSTRAINTS:
        raise ValueError(f"unknown constraint {name!r}")
    return name


# --------------------------------------------------------------------------
# prejudice remover
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PrejudiceConfig:
    eta: float = 1.0
    l2: float = 1e-3
    max_iter: int = 5000
    tol: float = 1e-5
    learning_rate: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.eta) or self.eta < 0:
            raise ValueError("eta must be finite and non-negative")


def prejudice_index(p, s) -> float:
    """Plug-in mutual information between the prediction and the group.

    ``(1/n) sum_i sum_y P(y|x_i) ln(P(y|s_i) / P(y))`` with the group and
    overall prediction rates estimated by mean predicted probabilities.
    """
    m = p.mean()
    out = 0.0
    for g in (0, 1):
        pg = p[s == g]
        if pg.size == 0:
            continue
        mg = pg.mean()
        out += (pg * np.log(mg / m)).sum() + ((1 - pg) * np.log((1 - mg) / (1 - m))).sum()
    return out / len(p)


def prejudice_objective(theta, Xs, y, s, w, l2, eta):
    """Weighted NLL + L2 + ``eta`` * prejudice index, with gradient."""
    n, d = Xs.shape
    loss, grad = classifier.nll_and_grad(theta, Xs, y, w, l2)
    if eta == 0:
        return loss, grad
    p = sigmoid(Xs @ theta[:d] + theta[d])
    m = p.mean()
    dp = np.empty(n)
    for g in (0, 1):
        rows = s == g
        if not rows.any():
            continue
        mg = p[rows].mean()
        # the derivative terms through the group and overall means cancel
        dp[rows] = (np.log(mg / (1 - mg)) - np.log(m / (1 - m))) / n
    r = eta * dp * p * (1 - p)
    grad = grad + np.append(Xs.T @ r, r.sum())
    return loss + eta * prejudice_index(p, s), grad


def prejudice_remover_fit(ds: TabularDataset, cfg: PrejudiceConfig | None = None) -> LogisticModel:
    """Logistic regression regularised toward prediction/group independence."""
    cfg = cfg or PrejudiceConfig()
    train_cfg = TrainConfig(l2=cfg.l2, max_iter=cfg.max_iter, tol=cfg.tol,
                            learning_rate=cfg.learning_rate)
    if cfg.eta == 0:
        return classifier.fit(ds, train_cfg)
    if np.unique(ds.labels).size < 2:
        raise DataError("degenerate labels: both classes are required")
    mean, scale = classifier.standardizer(ds.X)
    Xs = (ds.X - mean) / scale
    y, s, w = ds.labels, ds.protected, ds.weights
    # the prejudice term's curvature is bounded by about eta/4 per unit feature norm
    L = classifier.lipschitz(Xs, w, cfg.l2) * (1.0 + cfg.eta)
    step = cfg.learning_rate or 1.0 / L
    theta = np.zeros(Xs.shape[1] + 1)
    history = []
    converged = False
    it = 0
    for it in range(cfg.max_iter + 1):
        loss, grad = prejudice_objective(theta, Xs, y, s, w, cfg.l2, cfg.eta)
        if not np.isfinite(loss):
            raise FloatingPointError("prejudice remover diverged")
        history.append(loss)
        if np.linalg.norm(grad) < cfg.tol:
            converged = True
            break
        if it == cfg.max_iter:
            break
        theta = theta - step * grad
    return LogisticModel(
        coef=theta[:-1], intercept=float(theta[-1]), mean=mean, scale=scale,
        config=train_cfg, converged=converged, n_iter=it, loss_history=np.asarray(history),
    )


# --------------------------------------------------------------------------
# linear constraint moments
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Moments:
    """Constraints ``A @ h + b <= eps`` for a prediction vector ``h``.

    Each row is one signed constraint; ``names`` labels them.
    """

    A: np.ndarray
    b: np.ndarray
    names: tuple[str, ...]

    def gamma(self, h) -> np.ndarray:
        return self.A @ h + self.b


def _mean_row(mask):
    n = mask.sum()
    if n == 0:
        raise DataError("empty group/event cell in constraint")
    return mask / n


def build_moments(kind: str, y, s, ratio_bound: float = 0.8) -> Moments:
    """Signed moment rows for ``kind`` on labels ``y`` and groups ``s``."""
    kind = constraint_kind(kind)
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    rows, offsets, names = [], [], []

    def parity(event, tag):
        overall = _mean_row(event)
        for g in (0, 1):
            gap = _mean_row(event & (s == g)) - overall
            for sign, label in ((1.0, "+"), (-1.0, "-")):
                rows.append(sign * gap)
                offsets.append(0.0)
                names.append(f"{tag}[{g}]{label}")

    everyone = np.ones(len(y), dtype=bool)
    if kind == "demographic_parity":
        parity(everyone, "dp")
    elif kind == "tpr_difference":
        parity(y == 1, "tpr")
    elif kind == "equalized_odds":
        parity(y == 1, "tpr")
        parity(y == 0, "fpr")
    elif kind == "error_rate_ratio":
        # err_i(h) = y_i + h_i (1 - 2 y_i): linear in h
        slope = 1.0 - 2.0 * y
        overall = _mean_row(everyone)
        for g in (0, 1):
            grp = _mean_row(s == g)
            # r * err_g - err <= eps  and  r * err - err_g <= eps
            rows.append(slope * (ratio_bound * grp - overall))
            offsets.append(float(y @ (ratio_bound * grp - overall)))
            names.append(f"err[{g}]+")
            rows.append(slope * (ratio_bound * overall - grp))
            offsets.append(float(y @ (ratio_bound * overall - grp)))
            names.append(f"err[{g}]-")
    else:
        raise ValueError(f"{kind} is not a classification moment")
    return Moments(np.vstack(rows), np.asarray(offsets), tuple(names))


def _best_response(X, y, cost, cfg, theta0=None) -> tuple[LogisticModel, np.ndarray]:
    """Weighted logistic fit to the cost-sensitive problem ``min cost @ h``.

    ``cost[i]`` is the change in objective when ``h_i`` goes from 0 to 1;
    instances are labelled favourable where that change is negative and
    weighted by its magnitude.
    """
    labels = (cost < 0).astype(float)
    mag = np.abs(cost)
    if np.unique(labels).size < 2 or mag.sum() == 0:
        # constant hypothesis: a model whose intercept settles the sign
        const = 1.0 if cost.sum() < 0 else 0.0
        mean, scale = classifier.standardizer(np.asarray(X, dtype=float))
        model = LogisticModel(
            coef=np.zeros(X.shape[1]), intercept=30.0 if const else -30.0,
            mean=mean, scale=scale, config=cfg, converged=True,
        )
        return model, np.full(len(cost), const)
    weights = mag / mag.mean()
    model = classifier.fit_arrays(X, labels, weights, cfg, theta0=theta0)
    h = classifier.predict_label(model, X)
    return model, h


# --------------------------------------------------------------------------
# exponentiated gradient
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RandomizedClassifier:
    """Mixture of logistic models, each used with its mixing probability."""

    models: list[LogisticModel]
    probs: np.ndarray
    multipliers: np.ndarray = field(default=None, repr=False)
    n_iter: int = 0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9 or len(probs) != len(self.models):
            raise ValueError("mixing probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", probs)

    def member_predictions(self, X) -> np.ndarray:
        return np.vstack([classifier.predict_label(m, X) for m in self.models])

    def predict_proba(self, X) -> np.ndarray:
        """Probability that the mixture predicts favourable for each row."""
        return self.probs @ self.member_predictions(X)


def _features(data):
    return data.X if isinstance(data, TabularDataset) else np.asarray(data, dtype=float)


def expgrad_fit(ds: TabularDataset, constraint: str = "demographic_parity", eps: float = 0.01,
                max_iter: int = 50, seed: int = 0, eta: float = 2.0,
                cfg: TrainConfig | None = None, ratio_bound: float = 0.8) -> RandomizedClassifier:
    """Saddle-point search between constraint multipliers and a logistic oracle.

    Multipliers follow exponentiated-gradient updates, normalised so their sum
    never exceeds ``1/eps``; the oracle answers each multiplier vector with a
    cost-sensitive weighted fit. The returned classifier is the uniform
    average of all best responses (identical hypotheses merged).
    """
    kind = constraint_kind(constraint)
    if kind not in EXPGRAD_CONSTRAINTS:
        raise ValueError(f"exponentiated gradient does not support {kind}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    cfg = cfg or TrainConfig(seed=seed)
    X, y, s = ds.X, ds.labels, ds.protected
    n = len(y)
    mom = build_moments(kind, y, s, ratio_bound)
    err_cost = (1.0 - 2.0 * y) / n

    base, h0 = _best_response(X, y, err_cost, cfg)
    if np.max(mom.gamma(h0)) <= eps:
        return RandomizedClassifier([base], np.array([1.0]), np.zeros(len(mom.names)), 0)

    bound = 1.0 / eps if np.isfinite(eps) else 0.0
    step = eta / bound if bound else 0.0
    theta = np.zeros(len(mom.names))
    models: list[LogisticModel] = []
    keys: list[bytes] = []
    counts: list[int] = []
    lam_sum = np.zeros_like(theta)
    warm = base.theta
    for t in range(max_iter):
        e = np.exp(theta - theta.max())
        lam = bound * e / (np.exp(-theta.max()) + e.sum())
        if not np.all(np.isfinite(lam)):
            raise FloatingPointError("non-finite multipliers")
        lam_sum += lam
        cost = err_cost + lam @ mom.A
        model, h = _best_response(X, y, cost, cfg, theta0=warm)
        warm = model.theta
        key = h.astype(np.int8).tobytes()
        if key in keys:
            counts[keys.index(key)] += 1
        else:
            keys.append(key)
            models.append(model)
            counts.append(1)
        theta = theta + step * (mom.gamma(h) - eps)
    probs = np.asarray(counts, dtype=float) / sum(counts)
    return RandomizedClassifier(models, probs, lam_sum / max_iter, max_iter)


def mixture_violation(clf: RandomizedClassifier, ds: TabularDataset, constraint: str,
                      ratio_bound: float = 0.8) -> float:
    mom = build_moments(constraint, ds.labels, ds.protected, ratio_bound)
    return float(np.max(mom.gamma(clf.predict_proba(ds.X))))


# --------------------------------------------------------------------------
# grid search
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridPoint:
    multiplier: float
    error: float
    violation: float
    model: LogisticModel = field(repr=False)


@dataclass(frozen=True, eq=False)
class GridSearchResult:
    best: LogisticModel
    best_index: int
    feasible: bool
    trace: list[GridPoint]


def grid_multipliers(grid_size: int, lambda_max: float) -> np.ndarray:
    """Symmetric grid on [-lambda_max, lambda_max]; the point nearest 0 is 0."""
    if grid_size < 2:
        raise ValueError("grid size must be at least 2")
    grid = np.linspace(-lambda_max, lambda_max, grid_size)
    grid[np.argmin(np.abs(grid))] = 0.0
    return grid


def _group_log_loss(model, X, y, s):
    p = classifier.predict_proba(model, X)
    ll = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    return np.array([ll[s == g].mean() for g in (0, 1)])


def grid_point_stats(model, X, y, s, kind, loss_bound):
    """(error, violation) of one grid model on the data it was fitted to."""
    h = classifier.predict_label(model, X)
    error = float(np.mean(h != y))
    if kind == "demographic_parity":
        violation = abs(h[s == 0].mean() - h[s == 1].mean())
    else:
        violation = max(0.0, float(np.max(_group_log_loss(model, X, y, s) - loss_bound)))
    return error, float(violation)


def grid_search_fit(ds: TabularDataset, constraint: str = "demographic_parity",
                    grid_size: int = 21, lambda_max: float = 1.0,
                    max_violation: float = 0.05, loss_bound: float = 0.6,
                    cfg: TrainConfig | None = None) -> GridSearchResult:
    """One weighted logistic fit per multiplier; keep the best feasible one.

    Demographic parity uses the Lagrangian ``err(h) - m * share * SPD(h)``
    where ``share`` is the smaller group's fraction of rows, so ``|m| = 1`` is
    the point where one group's error cost is fully offset and beyond which
    its labels flip wholesale. Positive ``m`` favours the unprivileged group. Bounded group loss reweights the
    unprivileged group by ``1 + m`` (negative ``m`` reweights the privileged
    group by ``1 - m``); a point is feasible when each group's mean log-loss
    stays under ``loss_bound``.
    """
    kind = constraint_kind(constraint)
    if kind not in GRID_CONSTRAINTS:
        raise ValueError(f"grid search does not support {kind}")
    cfg = cfg or TrainConfig()
    X, y, s = ds.X, ds.labels, ds.protected
    n = len(y)
    n0, n1 = (s == 0).sum(), (s == 1).sum()
    if n0 == 0 or n1 == 0:
        raise DataError("grid search needs both groups")
    share = min(n0, n1) / n
    trace = []
    for m in grid_multipliers(grid_size, lambda_max):
        if m == 0.0:
            model = classifier.fit(ds, cfg)
        elif kind == "demographic_parity":
            cost = (1.0 - 2.0 * y) / n - m * share * np.where(s == 0, 1.0 / n0, -1.0 / n1)
            model, _ = _best_response(X, y, cost, cfg)
        else:
            w = np.where(s == 0, 1.0 + max(m, 0.0), 1.0 + max(-m, 0.0))
            model = classifier.fit_arrays(X, y, w * ds.weights, cfg)
        error, violation = grid_point_stats(model, X, y, s, kind, loss_bound)
        trace.append(GridPoint(float(m), error, violation, model))

    feasible = [i for i, p in enumerate(trace) if p.violation <= max_violation]
    if feasible:
        best = min(feasible, key=lambda i: (trace[i].error, trace[i].violation))
    else:
        best = min(range(len(trace)), key=lambda i: (trace[i].violation, trace[i].error))
        logger.warning("no grid point meets the constraint; returning least-violating model")
    return GridSearchResult(trace[best].model, best, bool(feasible), trace)
