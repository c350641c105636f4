import numpy as np
import pytest

from faircredit import dataset
from faircredit.dataset import TabularDataset


@pytest.fixture(scope="session")
def german():
    return dataset.load_german()


def make_synthetic(n=500, d=4, seed=0, bias=1.0, numeric=True):
    """Two-group logistic data where the privileged group is favoured by ``bias``."""
    rng = np.random.default_rng(seed)
    s = (rng.random(n) < 0.6).astype(float)
    X = rng.normal(size=(n, d))
    X[:, 0] += 0.8 * s
    z = X @ np.linspace(1.0, 0.2, d) + bias * (s - 0.5)
    y = (rng.random(n) < 1 / (1 + np.exp(-z))).astype(float)
    return TabularDataset(
        X=X, labels=y, protected=s, weights=np.ones(n),
        feature_names=[f"x{j}" for j in range(d)], numeric=[numeric] * d,
    )


@pytest.fixture
def synthetic():
    return make_synthetic()


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
