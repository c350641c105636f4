"""Fairness auditing and bias mitigation for credit-scoring classifiers."""

from .classifier import LogisticModel, TrainConfig
from .dataset import ConfigError, DataError, FeatureSchema, TabularDataset
from .harness import BenchmarkResult, BenchmarkTable, PipelineSpec, run_benchmark, run_pipeline
from .metrics import MetricReport, ProfitConfig, evaluate

__all__ = [
    "BenchmarkResult", "BenchmarkTable", "ConfigError", "DataError", "FeatureSchema",
    "LogisticModel", "MetricReport", "PipelineSpec", "ProfitConfig", "TabularDataset",
    "TrainConfig", "evaluate", "run_benchmark", "run_pipeline",
]
__version__ = "0.1.0"
