"""Command-line entry point: ``faircredit <command> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import dataset, harness
from .dataset import ConfigError, DataError

logger = logging.getLogger("faircredit")

EXIT_CONFIG = 2
EXIT_DATA = 3


def _default_seed() -> int:
    raw = os.environ.get("FAIRCREDIT_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"FAIRCREDIT_SEED must be an integer, got {raw!r}") from None


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="'german', an encoded CSV, or a raw CSV with --schema")
    p.add_argument("--schema", help="schema INI for a raw CSV (path, 'german' or 'consumer')")
    p.add_argument("--seed", type=int, default=None, help="split seed (default $FAIRCREDIT_SEED or 0)")
    p.add_argument("--folds", type=int, default=None, help="cross-validation folds (0 = single split)")
    p.add_argument("--tune-threshold", action="store_true", default=None,
                   help="tune the decision threshold on validation for balanced accuracy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faircredit", description="Fairness benchmark for credit scoring.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="curate a raw CSV into the encoded format")
    p.add_argument("raw", help="raw CSV file")
    p.add_argument("--schema", required=True, help="schema INI (path, 'german' or 'consumer')")
    p.add_argument("--out", required=True, help="encoded CSV to write")

    p = sub.add_parser("audit", help="fairness audit of the unmitigated classifier")
    _add_run_options(p)
    p.add_argument("--format", choices=("csv", "json", "markdown"), default="markdown")

    p = sub.add_parser("mitigate", help="run one processor against the baseline")
    _add_run_options(p)
    p.add_argument("--processor", required=True, help="e.g. 'roc{constraint=SPD}'")
    p.add_argument("--format", choices=("csv", "json", "markdown"), default="markdown")

    p = sub.add_parser("benchmark", help="run a processor suite and write all reports")
    _add_run_options(p)
    p.add_argument("--suite", help="suite INI (default: bundled german suite)")
    p.add_argument("--out-dir", default="results", help="output directory")

    p = sub.add_parser("report", help="render saved results")
    p.add_argument("results", help="results.json from 'benchmark'")
    p.add_argument("--format", choices=("csv", "json", "markdown"), default="csv")
    p.add_argument("--out", help="write here instead of stdout")

    p = sub.add_parser("plot-data", help="write metric-vs-accuracy scatter CSVs")
    p.add_argument("results", help="results.json from 'benchmark'")
    p.add_argument("--out-dir", default="plots")
    return parser


def _common(args) -> dict:
    out = {
        "dataset": args.data,
        "seed": args.seed if args.seed is not None else _default_seed(),
    }
    if args.folds is not None:
        out["folds"] = args.folds
    if args.tune_threshold:
        out["tune_threshold"] = True
    return out


def _load(args):
    return harness.load_dataset(args.data, args.schema)


def _read_table(path) -> harness.BenchmarkTable:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return harness.BenchmarkTable.from_json(text)
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path} is not a results file: {exc}") from exc


def run(args) -> int:
    if args.command == "prepare":
        schema = harness.resolve_schema(args.schema)
        ds = dataset.curate(dataset.load_csv(args.raw, schema), schema)
        ds.to_csv(args.out)
        logger.info("wrote %d rows, %d features to %s", len(ds), ds.n_features, args.out)
        return 0

    if args.command in ("audit", "mitigate"):
        ds = _load(args)
        specs = [harness.PipelineSpec(processor="none", **_common(args))]
        if args.command == "mitigate":
            specs.insert(0, harness.PipelineSpec.parse(args.processor, **_common(args)))
        table = harness.run_benchmark(specs, ds)
        sys.stdout.write(harness.emit_report(table, args.format))
        return 0

    if args.command == "benchmark":
        suite = args.suite or harness.suite_path("german")
        specs = harness.load_suite(suite, **_common(args))
        table = harness.run_benchmark(specs, _load(args))
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.json").write_text(table.to_json(), encoding="utf-8")
        (out / "report.csv").write_text(harness.emit_report(table, "csv"), encoding="utf-8")
        (out / "report.md").write_text(harness.emit_report(table, "markdown"), encoding="utf-8")
        harness.emit_plot_data(table, out / "plots")
        for r in table.rows:
            if r.failures:
                logger.warning("%s: %d fold(s) failed", r.label, len(r.failures))
        sys.stdout.write(harness.emit_report(table, "markdown"))
        return 0

    if args.command == "report":
        text = harness.emit_report(_read_table(args.results), args.format)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return 0

    if args.command == "plot-data":
        for path in harness.emit_plot_data(_read_table(args.results), args.out_dir):
            print(path)
        return 0
    raise ConfigError(f"unknown command {args.command!r}")  # pragma: no cover


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
