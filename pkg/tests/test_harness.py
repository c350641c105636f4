import json
import math

import numpy as np
import pytest

from conftest import make_synthetic
from faircredit import harness, metrics
from faircredit.dataset import ConfigError, TabularDataset
from faircredit.harness import PipelineSpec

FAST = ["reweighing", "dir", "roc", "ceo", "prejudice_remover{eta=2}",
        "expgrad{eps=0.05,max_iter=10}", "grid_search{grid_size=5}", "lfr{k=4,max_iter=30}"]


@pytest.fixture(scope="module")
def data():
    return make_synthetic(n=600, seed=11, bias=1.5)


@pytest.fixture(scope="module")
def table(data):
    specs = [PipelineSpec.parse(p, folds=3) for p in FAST]
    return harness.run_benchmark(specs, data)


def test_parse_processor():
    assert harness.parse_processor("roc") == ("roc", {})
    name, params = harness.parse_processor("lfr{k=10, Az=50, Ax=0.01}")
    assert name == "lfr" and params == {"k": 10, "Az": 50, "Ax": 0.01}
    assert harness.parse_processor("roc{constraint=EOD}")[1] == {"constraint": "EOD"}
    for bad in ("bogus", "lfr{k}", "lfr{", "lfr{unknown=1}", "roc{constraint=DI}", "lfr{k=2.5}"):
        with pytest.raises(ConfigError):
            PipelineSpec.parse(bad)


def test_spec_invariants():
    assert PipelineSpec(processor="roc").ptype == "post"
    with pytest.raises(ConfigError):
        PipelineSpec(processor="roc", ptype="pre")
    with pytest.raises(ConfigError):
        PipelineSpec(folds=-1)


def test_table_order_and_baseline(table):
    types = [r.ptype for r in table.rows]
    assert len(table) == len(FAST) + 1
    assert types == sorted(types, key=harness.TYPE_ORDER.get)
    assert table.rows[-1].processor == "none"
    assert [r.processor for r in table.rows if r.ptype == "pre"] == ["reweighing", "dir", "lfr"]


def test_paired_folds(table):
    assert len({r.fold_hash for r in table.rows}) == 1
    assert all(len(r.reports) == 3 and not r.failures for r in table.rows)


def test_means_recomputable(table):
    for r in table.rows:
        for key in harness.METRIC_KEYS:
            vals = [getattr(rep, key) for rep in r.reports]
            assert r.mean[key] == pytest.approx(float(np.mean(vals)), abs=1e-12)
            assert r.std[key] == pytest.approx(float(np.std(vals)), abs=1e-12)


def test_leakage_guard_silent_and_counting(data):
    before = harness.leakage_guard.checks
    harness.run_pipeline(PipelineSpec(folds=3), data)
    assert harness.leakage_guard.checks == before + 6
    assert harness.leakage_guard.violations == 0
    with pytest.raises(harness.LeakageError):
        harness.Guard()(np.array([1, 2]), np.array([2, 3]))


def test_fold_plan_disjoint(german):
    plan = harness.fold_plan(PipelineSpec(folds=10), german)
    assert len(plan) == 10
    test = plan[0][2]
    assert len(test) == 300
    for fit, val, t in plan:
        np.testing.assert_array_equal(t, test)
        assert not np.intersect1d(fit, t).size and not np.intersect1d(val, t).size
        assert not np.intersect1d(fit, val).size
    single = harness.fold_plan(PipelineSpec(folds=0), german)
    assert len(single) == 1 and len(single[0][0]) + len(single[0][1]) == 700


def test_identity_processor_equals_baseline(data):
    base = harness.run_pipeline(PipelineSpec(folds=3), data)
    ident = harness.run_pipeline(PipelineSpec.parse("dir{lambda=0}", folds=3), data)
    assert [r.values() for r in base.reports] == [r.values() for r in ident.reports]


def test_deterministic_reports(data):
    specs = [PipelineSpec.parse(p, folds=3) for p in ("reweighing", "roc", "expgrad{eps=0.05,max_iter=5}")]
    a = harness.emit_report(harness.run_benchmark(specs, data), "csv")
    b = harness.emit_report(harness.run_benchmark(specs, data), "csv")
    assert a.encode() == b.encode()


def test_fold_failures_are_flagged():
    ds = make_synthetic(n=300, seed=1)
    y = np.where(ds.protected == 0, 1.0, ds.labels)  # unprivileged all favourable
    ds = TabularDataset(ds.X, y, ds.protected, ds.weights, ds.feature_names, ds.numeric)
    res = harness.run_pipeline(PipelineSpec(processor="reweighing", folds=3), ds)
    assert len(res.failures) == 3 and not res.reports
    assert math.isnan(res.mean["DI"])


def test_run_benchmark_errors():
    with pytest.raises(ValueError):
        harness.run_benchmark([])


def test_emit_report_formats(table):
    csv_text = harness.emit_report(table, "csv")
    lines = csv_text.splitlines()
    assert lines[0] == ",".join(metrics.CSV_COLUMNS)
    assert len(lines) == len(table) + 1
    assert lines[-1].startswith("No bias mitigation,N/A,")
    md = harness.emit_report(table, "markdown")
    assert md.splitlines()[0].startswith("| Fairness processor | Proc. type | DI |")
    doc = json.loads(harness.emit_report(table, "json"))
    assert [r["processor"] for r in doc["rows"]] == [r.processor for r in table.rows]
    with pytest.raises(ConfigError):
        harness.emit_report(table, "xml")


def test_one_row_csv(data):
    tab = harness.run_benchmark([PipelineSpec(folds=0)], data)
    assert len(harness.emit_report(tab, "csv").splitlines()) == 2


def test_json_round_trip(table):
    back = harness.BenchmarkTable.from_json(table.to_json())
    assert harness.emit_report(back, "csv") == harness.emit_report(table, "csv")
    assert back.to_json() == table.to_json()


def test_table_requires_baseline(table):
    with pytest.raises(ValueError):
        harness.BenchmarkTable([r for r in table.rows if r.processor != "none"])


def test_plot_data(table, tmp_path):
    paths = harness.emit_plot_data(table, tmp_path)
    assert sorted(p.name for p in paths) == ["aod.csv", "di.csv", "eod.csv", "spd.csv", "ti.csv"]
    expected = {"di": ("0.800000", "1.250000"), "spd": ("-0.100000", "0.100000"),
                "ti": ("0.000000", "0.150000")}
    for p in paths:
        rows = p.read_text().splitlines()
        assert rows[0].endswith(",BAcc,lower,upper")
        assert len(rows) - 1 == len(table)
        if p.stem in expected:
            assert tuple(rows[1].split(",")[-2:]) == expected[p.stem]


def test_tune_threshold():
    p = np.array([0.1, 0.2, 0.3, 0.35, 0.8, 0.9])
    y = np.array([0, 0, 0, 1, 1, 1])
    t = harness.tune_threshold(p, y)
    assert 0.3 < t <= 0.35
    assert harness.tune_threshold(np.full(4, 0.5), np.array([0, 1, 0, 1])) == 0.5


def test_suite_loading(tmp_path):
    specs = harness.load_suite(harness.suite_path("german"))
    assert [s.processor for s in specs][-1] == "none" and len(specs) == 9
    assert all(s.folds == 10 and s.seed == 0 for s in specs)
    over = harness.load_suite(harness.suite_path("german"), seed=7, folds=None)
    assert all(s.seed == 7 and s.folds == 10 for s in over)
    bad = tmp_path / "bad.ini"
    bad.write_text("[other]\nx = 1\n")
    with pytest.raises(ConfigError):
        harness.load_suite(bad)
    bad.write_text("[suite]\nfolds = ten\nprocessors = roc\n")
    with pytest.raises(ConfigError):
        harness.load_suite(bad)
    with pytest.raises(ConfigError):
        harness.load_suite(tmp_path / "missing.ini")
