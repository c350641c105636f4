"""Loading, curation, encoding and splitting of loan-application tables."""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

KINDS = ("numeric", "categorical", "binary")
MISSING = "missing"

# column names reserved for the canonical encoded CSV
LABEL_COL = "_label"
PROTECTED_COL = "_protected"
WEIGHT_COL = "_weight"


class ConfigError(ValueError):
    """Invalid schema, suite or processor configuration."""


class DataError(ValueError):
    """Input data that cannot be loaded, curated or split."""


@dataclass(frozen=True)
class FeatureSchema:
    columns: dict[str, str]
    target: str
    favorable: str
    protected: str
    threshold: float | None = None
    drop: tuple[str, ...] = ()

    def __post_init__(self):
        for name, kind in self.columns.items():
            if kind not in KINDS:
                raise ConfigError(f"column {name!r}: unknown kind {kind!r}")
        if self.target not in self.columns:
            raise ConfigError(f"target {self.target!r} is not a declared column")
        if self.protected not in self.columns:
            raise ConfigError(f"protected attribute {self.protected!r} is not a declared column")
        if self.protected == self.target:
            raise ConfigError("target and protected attribute must differ")
        if self.columns[self.protected] == "numeric" and self.threshold is None:
            raise ConfigError("numeric protected attribute needs a threshold")
        for name in self.drop:
            if name in (self.target, self.protected):
                raise ConfigError(f"cannot drop {name!r}")

    @classmethod
    def from_file(cls, path) -> "FeatureSchema":
        """Read a schema from an INI file with [dataset] and [columns] sections."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep column-name case
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read schema {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed schema {path}: {exc}") from exc
        if not parser.has_section("dataset") or not parser.has_section("columns"):
            raise ConfigError("schema needs [dataset] and [columns] sections")
        ds = parser["dataset"]
        try:
            threshold = ds.get("threshold", "").strip()
            return cls(
                columns={k: v.strip() for k, v in parser["columns"].items()},
                target=ds["target"].strip(),
                favorable=ds["favorable"].strip(),
                protected=ds["protected"].strip(),
                threshold=float(threshold) if threshold else None,
                drop=tuple(ds.get("drop", "").split()),
            )
        except KeyError as exc:
            raise ConfigError(f"schema is missing key {exc}") from exc

    @property
    def kept(self) -> list[str]:
        """Feature columns that survive the drop list (target excluded)."""
        return [c for c in self.columns if c not in self.drop and c != self.target]


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """Encoded features, binary labels and protected flags, plus weights.

    ``labels`` use 1 for the favourable outcome and ``protected`` uses 1 for
    the privileged group. ``numeric`` marks columns holding numeric features
    (the ones a distribution repair may touch).
    """

    X: np.ndarray
    labels: np.ndarray
    protected: np.ndarray
    weights: np.ndarray
    feature_names: tuple[str, ...]
    numeric: np.ndarray = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        n = X.shape[0]
        object.__setattr__(self, "X", X)
        for name in ("labels", "protected", "weights"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise DataError(f"{name} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, name, arr)
        if self.numeric is None:
            object.__setattr__(self, "numeric", np.zeros(X.shape[1], dtype=bool))
        else:
            object.__setattr__(self, "numeric", np.asarray(self.numeric, dtype=bool))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if len(self.feature_names) != X.shape[1] or self.numeric.shape != (X.shape[1],):
            raise DataError("feature metadata does not match the feature matrix")
        if not np.all(np.isfinite(X)):
            raise DataError("feature matrix contains missing or non-finite values")
        if not np.all(self.weights > 0):
            raise DataError("instance weights must be positive")
        for name in ("labels", "protected"):
            values = getattr(self, name)
            if not np.all((values == 0) | (values == 1)):
                raise DataError(f"{name} must be binary")
            if n and np.unique(values).size < 2:
                raise DataError(f"both {name} values must be present")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "TabularDataset":
        idx = np.asarray(idx)
        return replace(
            self,
            X=self.X[idx],
            labels=self.labels[idx],
            protected=self.protected[idx],
            weights=self.weights[idx],
        )

    def with_weights(self, weights) -> "TabularDataset":
        return replace(self, weights=weights)

    def with_features(self, X) -> "TabularDataset":
        return replace(self, X=X)

    def with_labels(self, labels) -> "TabularDataset":
        return replace(self, labels=labels)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.X, columns=list(self.feature_names))
        df[LABEL_COL] = self.labels.astype(int)
        df[PROTECTED_COL] = self.protected.astype(int)
        df[WEIGHT_COL] = self.weights
        return df

    def to_csv(self, path) -> None:
        """Write the canonical encoded form (readable by :func:`read_encoded`)."""
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def read_encoded(path) -> TabularDataset:
    """Read a dataset written by :meth:`TabularDataset.to_csv`.

    Indicator columns carry ``=`` in their name; every other feature column is
    treated as numeric.
    """
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read encoded dataset {path}: {exc}") from exc
    missing = {LABEL_COL, PROTECTED_COL} - set(df.columns)
    if missing:
        raise DataError(f"encoded dataset lacks columns {sorted(missing)}")
    features = [c for c in df.columns if c not in (LABEL_COL, PROTECTED_COL, WEIGHT_COL)]
    weights = df[WEIGHT_COL].to_numpy(float) if WEIGHT_COL in df else np.ones(len(df))
    return TabularDataset(
        X=df[features].to_numpy(float),
        labels=df[LABEL_COL].to_numpy(float),
        protected=df[PROTECTED_COL].to_numpy(float),
        weights=weights,
        feature_names=features,
        numeric=["=" not in c for c in features],
    )


def load_csv(path, schema: FeatureSchema) -> pd.DataFrame:
    """Read a raw CSV and type its columns according to ``schema``.

    Numeric columns become floats (missing cells are NaN); categorical and
    binary columns become strings with missing cells left as NaN.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=True, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise DataError("empty file") from exc
    if raw.empty:
        raise DataError("empty file")
    unknown = [c for c in raw.columns if c not in schema.columns]
    if unknown:
        raise DataError(f"unknown column(s): {unknown}")
    absent = [c for c in schema.columns if c not in raw.columns and c not in schema.drop]
    if absent:
        raise DataError(f"column(s) missing from file: {absent}")
    out = {}
    for name in raw.columns:
        col = raw[name].str.strip()
        if schema.columns[name] == "numeric" and name not in schema.drop:
            parsed = pd.to_numeric(col, errors="coerce")
            bad = parsed.isna() & col.notna()
            if bad.any():
                first = col[bad].iloc[0]
                raise DataError(f"column {name!r}: unparseable numeric cell {first!r}")
            out[name] = parsed.astype(float)
        else:
            out[name] = col
    return pd.DataFrame(out)


def _median(values: np.ndarray) -> float:
    # even count -> mean of the two middle values
    return float(np.median(values))


def curate(raw: pd.DataFrame, schema: FeatureSchema) -> TabularDataset:
    """Impute, one-hot encode and binarise a raw table into a dataset."""
    raw = raw.drop(columns=[c for c in schema.drop if c in raw.columns])
    target = raw[schema.target]
    if target.isna().any():
        raise DataError(f"target column {schema.target!r} has missing values")
    labels = (target.astype(str) == str(schema.favorable)).to_numpy(float)
    if labels.sum() == 0 and _as_number(schema.favorable) is not None:
        # numeric targets read as strings such as "0.0"
        labels = (pd.to_numeric(target, errors="coerce") == _as_number(schema.favorable)).to_numpy(float)

    prot_raw = raw[schema.protected]
    if schema.columns[schema.protected] == "numeric":
        if prot_raw.isna().any():
            raise DataError(f"protected column {schema.protected!r} has missing values")
        protected = (prot_raw.to_numpy(float) >= schema.threshold).astype(float)
    else:
        raise ConfigError("only a numeric protected attribute with a threshold is supported")

    blocks, names, numeric = [], [], []
    for name in schema.kept:
        kind = schema.columns[name]
        col = raw[name]
        if kind == "numeric":
            values = col.to_numpy(float)
            observed = values[~np.isnan(values)]
            if observed.size == 0:
                raise DataError(f"numeric column {name!r} is entirely missing")
            values = np.where(np.isnan(values), _median(observed), values)
            blocks.append(values[:, None])
            names.append(name)
            numeric.append(True)
        else:
            filled = col.fillna(MISSING).astype(str)
            cats = sorted(filled.unique())
            if kind == "binary" and len(cats) <= 2:
                # one indicator for the larger code; constant columns stay 0
                blocks.append((filled.to_numpy() == cats[-1]).astype(float)[:, None] if len(cats) == 2
                              else np.zeros((len(filled), 1)))
                names.append(f"{name}={cats[-1]}")
                numeric.append(False)
                continue
            onehot = (filled.to_numpy()[:, None] == np.array(cats)[None, :]).astype(float)
            blocks.append(onehot)
            names.extend(f"{name}={c}" for c in cats)
            numeric.extend([False] * len(cats))
    X = np.hstack(blocks) if blocks else np.empty((len(raw), 0))
    return TabularDataset(
        X=X,
        labels=labels,
        protected=protected,
        weights=np.ones(len(raw)),
        feature_names=names,
        numeric=numeric,
    )


def _as_number(text):
    try:
        return float(text)
    except ValueError:
        return None


def schema_path(name: str) -> Path:
    return Path(str(resources.files("faircredit") / "data" / f"{name}.ini"))


def load_german() -> TabularDataset:
    """The bundled Statlog German credit data (1000 applicants)."""
    schema = FeatureSchema.from_file(schema_path("german"))
    path = Path(str(resources.files("faircredit") / "data" / "german_credit.csv"))
    return curate(load_csv(path, schema), schema)


def load_consumer(path) -> TabularDataset:
    """The consumer-loans file (not bundled); ``path`` points at the CSV."""
    schema = FeatureSchema.from_file(schema_path("consumer"))
    return curate(load_csv(path, schema), schema)


@dataclass(frozen=True)
class DataSplit:
    train: np.ndarray
    test: np.ndarray
    validation: np.ndarray | None = None

    def parts(self) -> dict[str, np.ndarray]:
        out = {"train": self.train}
        if self.validation is not None:
            out["validation"] = self.validation
        out["test"] = self.test
        return out


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: list[tuple[np.ndarray, np.ndarray]] = field(repr=False)
    seed: int = 0

    def __iter__(self):
        return iter(self.folds)

    def __len__(self):
        return self.k


def _labels_of(data) -> np.ndarray:
    return data.labels if isinstance(data, TabularDataset) else np.asarray(data, dtype=float)


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    # largest-remainder rounding so the sizes add up to n
    raw = np.asarray(fractions) * n
    sizes = np.floor(raw).astype(int)
    order = np.argsort(-(raw - sizes), kind="stable")
    for i in order[: n - sizes.sum()]:
        sizes[i] += 1
    return sizes.tolist()


def stratified_split(data, fractions=(0.7, 0.0, 0.3), seed: int = 0) -> DataSplit:
    """Split indices into train / validation / test, stratified by label.

    ``fractions`` is ``(train, validation, test)``; a zero validation
    fraction yields no validation part. ``data`` is a dataset or a label vector.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, validation, test)")
    f_train, f_val, f_test = map(float, fractions)
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    if not 0.0 <= f_val < 1.0 or not 0.0 <= f_train <= 1.0 or not 0.0 <= f_test <= 1.0:
        raise ValueError("fraction out of (0, 1)")
    if f_train == 0.0 or f_test == 0.0:
        raise DataError("empty part")
    y = _labels_of(data)
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for cls in (0.0, 1.0):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        sizes = _allocate(len(idx), (f_train, f_val, f_test))
        for p, size in enumerate(sizes):
            if size == 0 and (p != 1 or f_val > 0):
                raise DataError(f"class {int(cls)} too small to stratify")
        bounds = np.cumsum([0] + sizes)
        for p in range(3):
            parts[p].append(idx[bounds[p]:bounds[p + 1]])
    train, val, test = (np.sort(np.concatenate(p)) for p in parts)
    return DataSplit(train=train, test=test, validation=val if f_val > 0 else None)


def kfold(data, k: int = 10, seed: int = 0) -> FoldPlan:
    """Stratified k-fold plan over all indices of ``data``.

    Each class is shuffled and dealt round-robin over the folds, so fold sizes
    differ by at most one per class.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    y = _labels_of(data)
    counts = [int((y == c).sum()) for c in (0.0, 1.0)]
    if min(counts) < k:
        raise DataError(f"k={k} larger than minority-class count {min(counts)}")
    rng = np.random.default_rng(seed)
    assign = np.empty(len(y), dtype=int)
    offset = 0
    for cls in (0.0, 1.0):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        assign[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    all_idx = np.arange(len(y))
    folds = [(all_idx[assign != f], all_idx[assign == f]) for f in range(k)]
    return FoldPlan(k=k, folds=folds, seed=seed)


def carve_validation(labels, train_idx, fraction: float = 0.2, seed: int = 0):
    """Split ``train_idx`` into (fit, validation) with a stratified tail.

    The validation part takes the last ``fraction`` of each class after a
    seeded shuffle.
    """
    train_idx = np.asarray(train_idx)
    y = np.asarray(labels)[train_idx]
    rng = np.random.default_rng(seed)
    fit, val = [], []
    for cls in (0.0, 1.0):
        idx = train_idx[y == cls]
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(fraction * len(idx)))
        if n_val == 0 or n_val == len(idx):
            raise DataError(f"class {int(cls)} too small to carve a validation part")
        fit.append(idx[: len(idx) - n_val])
        val.append(idx[len(idx) - n_val:])
    return np.sort(np.concatenate(fit)), np.sort(np.concatenate(val))


def label_parity(labels, protected) -> float:
    """Favourable base rate of the unprivileged group minus the privileged one."""
    labels = np.asarray(labels, dtype=float)
    protected = np.asarray(protected, dtype=float)
    unpriv, priv = protected == 0, protected == 1
    if not unpriv.any() or not priv.any():
        raise DataError("a part lacks one protected group")
    return float(labels[unpriv].mean() - labels[priv].mean())


def split_parity(ds: TabularDataset, split: DataSplit) -> dict[str, float]:
    return {
        name: label_parity(ds.labels[idx], ds.protected[idx])
        for name, idx in split.parts().items()
    }
