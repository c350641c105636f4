"""Benchmark pipeline: route each processor, cross-validate, aggregate, report."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import math
import re
import time
from importlib import resources
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import classifier, dataset, metrics
from . import mitigate_in as inproc
from . import mitigate_post as post
from . import mitigate_pre as pre
from .classifier import TrainConfig
from .dataset import ConfigError, DataError, TabularDataset
from .metrics import MetricReport, ProfitConfig, UndefinedMetricError

logger = logging.getLogger(__name__)

PROCESSOR_TYPES = {
    "reweighing": "pre",
    "lfr": "pre",
    "dir": "pre",
    "prejudice_remover": "in",
    "expgrad": "in",
    "grid_search": "in",
    "roc": "post",
    "ceo": "post",
    "none": "none",
}
LABELS = {
    "reweighing": "Reweighing",
    "lfr": "Learning Fair Representations",
    "dir": "Disparate impact remover",
    "prejudice_remover": "Prejudice Remover",
    "expgrad": "Exponentiated Gradient Red.",
    "grid_search": "Grid Search Reduction",
    "roc": "Reject Option Classification",
    "ceo": "Calibrated Odds-Equalizing",
    "none": "No bias mitigation",
}
TYPE_ORDER = {"pre": 0, "in": 1, "post": 2, "none": 3}
TYPE_LABELS = {"pre": "Pre", "in": "In", "post": "Post", "none": "N/A"}
METRIC_KEYS = ("DI", "SPD", "AOD", "EOD", "SP", "TI", "BAcc", "P")
PLOT_METRICS = ("DI", "SPD", "AOD", "EOD", "TI")

# recoverable per-fold failures
FOLD_ERRORS = (DataError, UndefinedMetricError, FloatingPointError)


class LeakageError(AssertionError):
    """A fit or transform step was handed test rows."""


class Guard:
    """Counts leakage checks; raises on any overlap with the test indices."""

    def __init__(self):
        self.checks = 0
        self.violations = 0

    def __call__(self, fit_idx, test_idx):
        self.checks += 1
        if np.intersect1d(fit_idx, test_idx).size:
            self.violations += 1
            raise LeakageError("test rows reached a fit step")


leakage_guard = Guard()


# --------------------------------------------------------------------------
# processor specs
# --------------------------------------------------------------------------

_PROC_RE = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\{(.*)\})?\s*$")


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_processor(text: str) -> tuple[str, dict]:
    """Parse ``name{key=value,...}`` into a name and a parameter dict."""
    m = _PROC_RE.match(text)
    if not m:
        raise ConfigError(f"malformed processor spec {text!r}")
    name, body = m.group(1).lower(), m.group(2)
    if name not in PROCESSOR_TYPES:
        raise ConfigError(f"unknown processor {name!r}")
    params = {}
    if body and body.strip():
        for item in body.split(","):
            if "=" not in item:
                raise ConfigError(f"parameter {item!r} in {text!r} needs key=value")
            key, value = item.split("=", 1)
            params[key.strip()] = _parse_value(value)
    return name, params


def format_processor(name: str, params: dict) -> str:
    if not params:
        return name
    return name + "{" + ",".join(f"{k}={v}" for k, v in params.items()) + "}"


def _names(kinds):
    return tuple(kinds) + tuple(a for a, k in inproc._ALIASES.items() if k in kinds)


# accepted parameters per processor; a tuple lists the allowed values
PARAMS = {
    "none": {},
    "reweighing": {},
    "lfr": {"k": int, "Az": float, "Ax": float, "Ay": float, "threshold": float,
            "seed": int, "max_iter": int, "temperature": float},
    "dir": {"level": float, "lambda": float},
    "prejudice_remover": {"eta": float, "l2": float, "max_iter": int},
    "expgrad": {"constraint": _names(inproc.EXPGRAD_CONSTRAINTS), "eps": float,
                "max_iter": int, "seed": int, "eta": float, "ratio_bound": float},
    "grid_search": {"constraint": _names(inproc.GRID_CONSTRAINTS), "grid_size": int,
                    "lambda_max": float, "max_violation": float, "loss_bound": float},
    "roc": {"constraint": post.ROC_CONSTRAINTS},
    "ceo": {"cost": post.CEO_COSTS},
}


def check_params(processor: str, params: dict) -> None:
    allowed = PARAMS[processor]
    for key, value in params.items():
        if key not in allowed:
            raise ConfigError(f"{processor}: unknown parameter {key!r}")
        kind = allowed[key]
        if isinstance(kind, tuple):
            if value not in kind:
                raise ConfigError(f"{processor}: {key} must be one of {', '.join(kind)}")
        elif kind is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"{processor}: {key} must be an integer")
        elif kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"{processor}: {key} must be a number")


@dataclass(frozen=True)
class PipelineSpec:
    dataset: str = "german"
    processor: str = "none"
    params: dict = field(default_factory=dict)
    ptype: str | None = None
    split: tuple[float, float, float] = (0.7, 0.0, 0.3)
    folds: int = 10
    seed: int = 0
    profit: ProfitConfig = field(default_factory=ProfitConfig)
    tune_threshold: bool = False
    validation_fraction: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.processor not in PROCESSOR_TYPES:
            raise ConfigError(f"unknown processor {self.processor!r}")
        expected = PROCESSOR_TYPES[self.processor]
        if self.ptype is None:
            object.__setattr__(self, "ptype", expected)
        elif self.ptype != expected:
            raise ConfigError(f"processor {self.processor!r} is {expected}, not {self.ptype}")
        check_params(self.processor, self.params)
        if self.folds not in (0, 1) and self.folds < 2:
            raise ConfigError("folds must be >= 2, or 0 for a single split")

    @property
    def label(self) -> str:
        return LABELS[self.processor]

    @classmethod
    def parse(cls, text: str, **kwargs) -> "PipelineSpec":
        name, params = parse_processor(text)
        return cls(processor=name, params=params, **kwargs)


def load_dataset(name: str, schema=None) -> TabularDataset:
    """Resolve ``german``, an encoded CSV, or a raw CSV plus schema."""
    if name == "german":
        return dataset.load_german()
    path = Path(name)
    if not path.exists():
        raise DataError(f"no such dataset: {name}")
    if schema is None:
        return dataset.read_encoded(path)
    if not isinstance(schema, dataset.FeatureSchema):
        schema = resolve_schema(schema)
    return dataset.curate(dataset.load_csv(path, schema), schema)


def resolve_schema(ref) -> dataset.FeatureSchema:
    """A schema path, or the name of a bundled schema (``german``/``consumer``)."""
    path = Path(ref)
    if not path.exists() and str(ref) in ("german", "consumer"):
        path = dataset.schema_path(str(ref))
    return dataset.FeatureSchema.from_file(path)


# --------------------------------------------------------------------------
# one fold
# --------------------------------------------------------------------------

THRESHOLD_GRID = np.round(np.linspace(0.01, 0.99, 99), 10)


def tune_threshold(probs, y) -> float:
    """Threshold with the best balanced accuracy; ties go to the one nearest 0.5."""
    best, best_key = 0.5, None
    for t in THRESHOLD_GRID:
        yhat = probs >= t
        if yhat.all() or not yhat.any():
            continue
        bacc = 0.5 * (yhat[y == 1].mean() + (~yhat[y == 0]).mean())
        key = (-bacc, abs(t - 0.5))
        if best_key is None or key < best_key:
            best, best_key = float(t), key
    return best


def _threshold(spec, probs_val, y_val):
    return tune_threshold(probs_val, y_val) if spec.tune_threshold else 0.5


def _params(spec, allowed):
    return {allowed[k]: v for k, v in spec.params.items()}


def _fit_logistic(spec, train: TabularDataset):
    return classifier.fit(train, spec.train)


def predict_fold(spec: PipelineSpec, fit: TabularDataset, val: TabularDataset,
                 test: TabularDataset) -> np.ndarray:
    """Predictions on ``test`` (possibly fractional) for one processor."""
    name = spec.processor
    if name in ("none", "reweighing", "lfr", "dir"):
        if name == "reweighing":
            _params(spec, {})
            fit = pre.reweigh(fit)
        elif name == "lfr":
            kw = _params(spec, {"k": "k", "Az": "Az", "Ax": "Ax", "Ay": "Ay",
                                "threshold": "threshold", "seed": "seed",
                                "max_iter": "max_iter", "temperature": "temperature"})
            kw.setdefault("seed", spec.seed)
            model = pre.lfr_fit(fit, **kw)
            fit, val, test = (pre.lfr_transform(model, d) for d in (fit, val, test))
        elif name == "dir":
            kw = _params(spec, {"lambda": "level", "level": "level"})
            plan = pre.dir_fit(fit, kw.get("level", 1.0))
            fit, val, test = (pre.dir_apply(plan, d) for d in (fit, val, test))
        else:
            _params(spec, {})
        model = _fit_logistic(spec, fit)
        t = _threshold(spec, classifier.predict_proba(model, val), val.labels)
        return classifier.predict_label(model, test, t)

    if name == "prejudice_remover":
        kw = _params(spec, {"eta": "eta", "l2": "l2", "max_iter": "max_iter"})
        kw.setdefault("l2", spec.train.l2)
        model = inproc.prejudice_remover_fit(fit, inproc.PrejudiceConfig(**kw))
        t = _threshold(spec, classifier.predict_proba(model, val), val.labels)
        return classifier.predict_label(model, test, t)

    if name == "grid_search":
        kw = _params(spec, {"constraint": "constraint", "grid_size": "grid_size",
                            "lambda_max": "lambda_max", "max_violation": "max_violation",
                            "loss_bound": "loss_bound"})
        result = inproc.grid_search_fit(fit, cfg=spec.train, **kw)
        t = _threshold(spec, classifier.predict_proba(result.best, val), val.labels)
        return classifier.predict_label(result.best, test, t)

    if name == "expgrad":
        kw = _params(spec, {"constraint": "constraint", "eps": "eps", "max_iter": "max_iter",
                            "seed": "seed", "eta": "eta", "ratio_bound": "ratio_bound"})
        kw.setdefault("seed", spec.seed)
        mixture = inproc.expgrad_fit(fit, cfg=spec.train, **kw)
        return mixture.predict_proba(test.X)

    base = _fit_logistic(spec, fit)
    p_val = classifier.predict_proba(base, val)
    p_test = classifier.predict_proba(base, test)
    if name == "roc":
        kw = _params(spec, {"constraint": "constraint"})
        policy = post.roc_fit(p_val, val.labels, val.protected, **kw)
        return post.roc_apply(policy, p_test, test.protected)
    if name == "ceo":
        kw = _params(spec, {"cost": "cost"})
        policy = post.ceo_fit(p_val, val.labels, val.protected, **kw)
        adj_val = post.ceo_apply(policy, p_val, val.protected)
        t = _threshold(spec, adj_val, val.labels)
        return (post.ceo_apply(policy, p_test, test.protected) >= t).astype(float)
    raise ConfigError(f"unknown processor {name!r}")  # pragma: no cover


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------

@dataclass
class BenchmarkResult:
    processor: str
    ptype: str
    spec: str
    reports: list[MetricReport]
    failures: list[tuple[int, str]] = field(default_factory=list)
    fold_hash: str = ""
    wall_time: float = 0.0

    @property
    def label(self) -> str:
        return LABELS.get(self.processor, self.processor)

    def _column(self, key):
        return np.array([getattr(r, key) for r in self.reports], dtype=float)

    @property
    def mean(self) -> dict[str, float]:
        return {k: float(np.nanmean(self._column(k))) if self.reports else math.nan
                for k in METRIC_KEYS}

    @property
    def std(self) -> dict[str, float]:
        return {k: float(np.nanstd(self._column(k))) if self.reports else math.nan
                for k in METRIC_KEYS}

    @property
    def summary(self) -> MetricReport:
        return MetricReport(**self.mean)

    @property
    def verdicts(self) -> dict[str, bool]:
        return self.summary.verdicts

    def to_dict(self) -> dict:
        return {
            "processor": self.processor,
            "type": self.ptype,
            "spec": self.spec,
            "mean": self.mean,
            "std": self.std,
            "verdicts": self.verdicts,
            "folds": [r.values() for r in self.reports],
            "failures": [list(f) for f in self.failures],
            "fold_hash": self.fold_hash,
            "wall_time": round(self.wall_time, 3),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkResult":
        return cls(
            processor=d["processor"],
            ptype=d["type"],
            spec=d.get("spec", d["processor"]),
            reports=[MetricReport(**f) for f in d["folds"]],
            failures=[tuple(f) for f in d.get("failures", [])],
            fold_hash=d.get("fold_hash", ""),
            wall_time=d.get("wall_time", 0.0),
        )


@dataclass
class BenchmarkTable:
    rows: list[BenchmarkResult]
    dataset: str = ""

    def __post_init__(self):
        if not any(r.processor == "none" for r in self.rows):
            raise ValueError("benchmark table must contain the no-mitigation baseline")

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, processor: str) -> BenchmarkResult:
        for r in self.rows:
            if r.processor == processor or r.spec == processor:
                return r
        raise KeyError(processor)

    @property
    def baseline(self) -> BenchmarkResult:
        return self["none"]

    def to_json(self) -> str:
        doc = {"dataset": self.dataset, "rows": [r.to_dict() for r in self.rows]}
        return json.dumps(_clean(doc), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BenchmarkTable":
        doc = json.loads(text)
        rows = [BenchmarkResult.from_dict(_unclean(r)) for r in doc["rows"]]
        return cls(rows, doc.get("dataset", ""))


def _clean(obj):
    # JSON has no NaN
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def _unclean(obj):
    if obj is None:
        return math.nan
    if isinstance(obj, dict):
        return {k: _unclean(v) if k != "verdicts" else v for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unclean(v) for v in obj]
    return obj


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

def fold_plan(spec: PipelineSpec, ds: TabularDataset):
    """List of (fit, validation, test) index triples for ``spec``."""
    split = dataset.stratified_split(ds, spec.split, spec.seed)
    test = split.test
    if spec.folds >= 2:
        pool = split.train if split.validation is None else np.sort(
            np.concatenate([split.train, split.validation]))
        plan = dataset.kfold(ds.labels[pool], spec.folds, spec.seed)
        out = []
        for f, (train_f, _) in enumerate(plan):
            fit, val = dataset.carve_validation(ds.labels, pool[train_f],
                                                spec.validation_fraction, spec.seed + f)
            out.append((fit, val, test))
        return out
    if split.validation is not None:
        return [(split.train, split.validation, test)]
    fit, val = dataset.carve_validation(ds.labels, split.train, spec.validation_fraction, spec.seed)
    return [(fit, val, test)]


def _hash_plan(plan) -> str:
    h = hashlib.sha256()
    for part in plan:
        for idx in part:
            h.update(np.asarray(idx, dtype=np.int64).tobytes())
            h.update(b"|")
    return h.hexdigest()[:16]


def run_pipeline(spec: PipelineSpec, ds: TabularDataset | None = None) -> BenchmarkResult:
    """Run one processor over every fold of ``spec`` and collect metric reports."""
    ds = ds if ds is not None else load_dataset(spec.dataset)
    start = time.perf_counter()
    plan = fold_plan(spec, ds)
    reports, failures = [], []
    for f, (fit_idx, val_idx, test_idx) in enumerate(plan):
        leakage_guard(fit_idx, test_idx)
        leakage_guard(val_idx, test_idx)
        test = ds.subset(test_idx)
        try:
            yhat = predict_fold(spec, ds.subset(fit_idx), ds.subset(val_idx), test)
            reports.append(metrics.evaluate(test.labels, yhat, test.protected, spec.profit))
        except FOLD_ERRORS as exc:
            logger.warning("%s fold %d failed: %s", spec.processor, f, exc)
            failures.append((f, str(exc)))
    return BenchmarkResult(
        processor=spec.processor,
        ptype=spec.ptype,
        spec=format_processor(spec.processor, spec.params),
        reports=reports,
        failures=failures,
        fold_hash=_hash_plan(plan),
        wall_time=time.perf_counter() - start,
    )


def run_benchmark(specs: list[PipelineSpec], ds: TabularDataset | None = None) -> BenchmarkTable:
    """Run every spec (adding the baseline if absent) and order rows pre, in, post, baseline."""
    if not specs:
        raise ValueError("no pipeline specs given")
    specs = list(specs)
    if not any(s.processor == "none" for s in specs):
        specs.append(replace(specs[0], processor="none", params={}, ptype=None))
    if ds is None:
        ds = load_dataset(specs[0].dataset)
    rows = [run_pipeline(s, ds) for s in specs]
    rows.sort(key=lambda r: TYPE_ORDER[r.ptype])
    hashes = {r.fold_hash for r in rows}
    if len(hashes) > 1:
        logger.warning("fold plans differ across processors; comparison is not paired")
    return BenchmarkTable(rows, specs[0].dataset)


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------

def load_suite(path, dataset_name: str | None = None, **overrides) -> list[PipelineSpec]:
    """Read an INI suite: a [suite] section with ``processors`` and run options."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read suite {path}: {exc}") from exc
    if not parser.has_section("suite"):
        raise ConfigError("suite file needs a [suite] section")
    sec = parser["suite"]
    try:
        common = {
            "dataset": dataset_name or sec.get("dataset", "german"),
            "folds": sec.getint("folds", 10),
            "seed": sec.getint("seed", 0),
            "split": tuple(float(x) for x in sec.get("split", "0.7, 0.0, 0.3").split(",")),
            "tune_threshold": sec.getboolean("tune_threshold", False),
            "validation_fraction": sec.getfloat("validation_fraction", 0.2),
            "profit": ProfitConfig(sec.getfloat("roi", 0.34), sec.getfloat("lc", 0.9)),
            "train": TrainConfig(l2=sec.getfloat("l2", 1e-3)),
        }
    except ValueError as exc:
        raise ConfigError(f"bad value in suite {path}: {exc}") from exc
    common.update({k: v for k, v in overrides.items() if v is not None})
    lines = [ln.strip() for ln in sec.get("processors", "").splitlines() if ln.strip()]
    if not lines:
        raise ConfigError("suite lists no processors")
    return [PipelineSpec.parse(line, **common) for line in lines]


def suite_path(name: str) -> Path:
    return Path(str(resources.files("faircredit") / "data" / f"{name}_suite.ini"))


# --------------------------------------------------------------------------
# emitters
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


def emit_report(table: BenchmarkTable, fmt: str = "csv") -> str:
    """Render the table as CSV, JSON or markdown; output is byte-stable."""
    if not table.rows:
        raise ValueError("empty table")
    if fmt == "json":
        return table.to_json() + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(metrics.CSV_COLUMNS)
        for r in table.rows:
            writer.writerow(r.summary.to_row(r.label, TYPE_LABELS[r.ptype]))
        return buf.getvalue()
    if fmt == "markdown":
        head = ["Fairness processor", "Proc. type", *metrics.CSV_COLUMNS[2:]]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for r in table.rows:
            m = r.mean
            cells = [r.label, TYPE_LABELS[r.ptype]] + [
                "N/A" if math.isnan(m[k]) else f"{m[k]:.3f}"
                for k in ("DI", "SPD", "AOD", "EOD", "TI", "BAcc", "P")
            ]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown report format {fmt!r}")


def plot_bounds(metric: str, theil_threshold: float = metrics.THEIL_THRESHOLD):
    if metric == "TI":
        return 0.0, theil_threshold
    return metrics.INTERVALS[metric]


def emit_plot_data(table: BenchmarkTable, out_dir) -> list[Path]:
    """One scatter CSV per fairness metric: metric value against balanced accuracy."""
    if not table.rows:
        raise ValueError("empty table")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for key in PLOT_METRICS:
        lo, hi = plot_bounds(key)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["processor", "type", key, "BAcc", "lower", "upper"])
        for r in table.rows:
            m = r.mean
            writer.writerow([r.label, TYPE_LABELS[r.ptype], _fmt(m[key]), _fmt(m["BAcc"]),
                             _fmt(lo), _fmt(hi)])
        path = out_dir / f"{key.lower()}.csv"
        path.write_text(buf.getvalue(), encoding="utf-8")
        paths.append(path)
    return paths
