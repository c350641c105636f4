"""Weighted binary logistic regression fitted by batch gradient descent."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .dataset import DataError, TabularDataset


@dataclass(frozen=True)
class TrainConfig:
    """Solver settings.

    ``learning_rate=None`` uses ``1/L`` for the Lipschitz constant ``L`` of the
    objective's gradient on the training data, which keeps the objective
    non-increasing. The step stays fixed for the whole run either way.
    """

    l2: float = 1e-3
    learning_rate: float | None = None
    max_iter: int = 5000
    tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True, eq=False)
class LogisticModel:
    """Fitted coefficients on standardised features.

    ``coef`` and ``intercept`` act on ``(X - mean) / scale``.
    """

    coef: np.ndarray
    intercept: float
    mean: np.ndarray
    scale: np.ndarray
    config: TrainConfig
    converged: bool
    n_iter: int = 0
    loss_history: np.ndarray = field(default=None, repr=False)

    @property
    def n_features(self) -> int:
        return self.coef.shape[0]

    @property
    def theta(self) -> np.ndarray:
        return np.append(self.coef, self.intercept)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"dimension mismatch: model has {self.n_features} features, got {X.shape}"
            )
        return ((X - self.mean) / self.scale) @ self.coef + self.intercept

    def to_json(self) -> str:
        return json.dumps(
            {
                "coef": self.coef.tolist(),
                "intercept": self.intercept,
                "mean": self.mean.tolist(),
                "scale": self.scale.tolist(),
                "config": asdict(self.config),
                "converged": self.converged,
                "n_iter": self.n_iter,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "LogisticModel":
        doc = json.loads(text)
        return cls(
            coef=np.asarray(doc["coef"], dtype=float),
            intercept=float(doc["intercept"]),
            mean=np.asarray(doc["mean"], dtype=float),
            scale=np.asarray(doc["scale"], dtype=float),
            config=TrainConfig(**doc["config"]),
            converged=bool(doc["converged"]),
            n_iter=int(doc.get("n_iter", 0)),
        )


_EPS = 1e-15


def sigmoid(z):
    """Logistic function, clipped so results stay strictly inside (0, 1)."""
    z = np.asarray(z, dtype=np.float64)
    return np.clip(0.5 * (1.0 + np.tanh(0.5 * z)), _EPS, 1.0 - _EPS)


def standardizer(X) -> tuple[np.ndarray, np.ndarray]:
    """Column means and scales; constant columns get scale 1."""
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def lipschitz(Xs, w, l2) -> float:
    """Gradient Lipschitz constant of the weighted NLL with an intercept column."""
    n = Xs.shape[0]
    A = np.hstack([Xs, np.ones((n, 1))]) * np.sqrt(w)[:, None]
    top = np.linalg.norm(A, 2) ** 2
    return 0.25 * top / n + l2


def nll_and_grad(theta, Xs, y, w, l2):
    """Objective and gradient used by the solver (``theta`` = coef + intercept)."""
    n, d = Xs.shape
    z = Xs @ theta[:d] + theta[d]
    p = sigmoid(z)
    loss = np.dot(w, np.logaddexp(0.0, z) - y * z) / n + 0.5 * l2 * np.dot(theta[:d], theta[:d])
    r = w * (p - y)
    grad = np.append(Xs.T @ r / n + l2 * theta[:d], r.sum() / n)
    return loss, grad


def fit_arrays(X, y, w=None, cfg: TrainConfig | None = None, theta0=None) -> LogisticModel:
    """Fit on raw arrays. ``theta0`` (standardised space) warm-starts the solver."""
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=np.float64)
    if np.unique(y).size < 2:
        raise DataError("degenerate labels: both classes are required")
    mean, scale = standardizer(X)
    Xs = (X - mean) / scale
    step = cfg.learning_rate or 1.0 / lipschitz(Xs, w, cfg.l2)
    if theta0 is None:
        theta0 = np.zeros(X.shape[1] + 1)
    theta, n_iter, converged, hist = _kernels.logistic_gd(
        Xs, y, w, cfg.l2, step, cfg.max_iter, cfg.tol, theta0
    )
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError("logistic regression diverged")
    return LogisticModel(
        coef=theta[:-1].copy(),
        intercept=float(theta[-1]),
        mean=mean,
        scale=scale,
        config=cfg,
        converged=bool(converged),
        n_iter=int(n_iter),
        loss_history=hist,
    )


def fit(ds: TabularDataset, cfg: TrainConfig | None = None) -> LogisticModel:
    """Fit on a dataset, honouring its instance weights."""
    return fit_arrays(ds.X, ds.labels, ds.weights, cfg)


def _features(data) -> np.ndarray:
    return data.X if isinstance(data, TabularDataset) else np.asarray(data, dtype=np.float64)


def predict_proba(model: LogisticModel, data) -> np.ndarray:
    """Favourable-class probability for each row of ``data``."""
    return sigmoid(model.decision_function(_features(data)))


def predict_label(model: LogisticModel, data, threshold: float = 0.5) -> np.ndarray:
    """1 where the favourable probability reaches ``threshold`` (ties favourable)."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    return (predict_proba(model, data) >= threshold).astype(float)
