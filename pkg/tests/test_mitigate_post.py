import hashlib
import inspect

import numpy as np
import pytest

from conftest import make_synthetic
from faircredit import classifier
from faircredit import mitigate_post as post
from faircredit.metrics import UndefinedMetricError
from faircredit.mitigate_post import CeoPolicy, NotFittedError, RocPolicy


def _scores(n=400, seed=0):
    rng = np.random.default_rng(seed)
    s = (rng.random(n) < 0.4).astype(float)
    y = (rng.random(n) < 0.45 + 0.25 * s).astype(float)
    p = np.clip(0.25 + 0.4 * y + 0.15 * s + rng.normal(0, 0.15, n), 0.01, 0.99)
    return p, y, s


# --------------------------------------------------------------------------
# reject option classification
# --------------------------------------------------------------------------

def test_roc_fit_meets_constraint():
    p, y, s = _scores()
    pol = post.roc_fit(p, y, s, "SPD")
    assert pol.fitted and pol.feasible and -0.1 < pol.metric_value < 0.1
    labels = post.roc_apply(pol, p, s)
    spd = labels[s == 0].mean() - labels[s == 1].mean()
    assert spd == pytest.approx(pol.metric_value, abs=1e-12)


def test_roc_already_fair_keeps_smallest_margin():
    rng = np.random.default_rng(1)
    y = (rng.random(200) < 0.5).astype(float)
    s = np.tile([0.0, 1.0], 100)
    p = np.where(y == 1, 0.98, 0.02)
    pol = post.roc_fit(p, y, s, "SPD")
    assert pol.margin == post.DEFAULT_MARGINS.min()
    np.testing.assert_array_equal(post.roc_apply(pol, p, s), y)


@pytest.mark.parametrize("seed", range(20))
def test_roc_flips_only_inside_region(seed):
    p, y, s = _scores(seed=seed)
    rng = np.random.default_rng(seed)
    pol = RocPolicy("SPD", float(rng.uniform(0.3, 0.7)), float(rng.uniform(0.01, 0.25)), fitted=True)
    labels = post.roc_apply(pol, p, s)
    plain = (p >= pol.threshold).astype(float)
    for i in np.flatnonzero(labels != plain):
        assert pol.threshold - pol.margin <= p[i] <= pol.threshold + pol.margin


def test_roc_region_is_closed():
    pol = RocPolicy("SPD", 0.5, 0.125, fitted=True)  # exact binary fractions
    p = np.array([0.375, 0.625, 0.375, 0.625])
    s = np.array([0.0, 0.0, 1.0, 1.0])
    np.testing.assert_array_equal(post.roc_apply(pol, p, s), [1, 1, 0, 0])


def test_roc_idempotent():
    p, y, s = _scores()
    pol = post.roc_fit(p, y, s, "EOD")
    np.testing.assert_array_equal(post.roc_apply(pol, p, s), post.roc_apply(pol, p, s))


def test_roc_infeasible_flagged():
    y = np.tile([0.0, 1.0], 50)
    s = np.repeat([0.0, 1.0], 50)
    p = np.where(s == 1, 0.99, 0.01)  # far outside every critical region
    pol = post.roc_fit(p, y, s, "SPD")
    assert not pol.feasible


def test_roc_errors():
    with pytest.raises(ValueError):
        RocPolicy("SPD", 0.5, 0.5)
    with pytest.raises(ValueError):
        RocPolicy("DI", 0.5, 0.1)
    with pytest.raises(NotFittedError):
        post.roc_apply(RocPolicy(), np.array([0.5]), np.array([0.0]))
    with pytest.raises(UndefinedMetricError):
        post.roc_fit(np.array([0.5, 0.6]), np.array([1.0, 0.0]), np.array([1.0, 1.0]))


def test_post_processors_never_read_features():
    for fn in (post.roc_fit, post.roc_apply, post.ceo_fit, post.ceo_apply):
        params = set(inspect.signature(fn).parameters)
        assert not params & {"X", "ds", "data", "features"}


def test_model_untouched():
    ds = make_synthetic()
    model = classifier.fit(ds)
    digest = hashlib.sha256(model.to_json().encode()).hexdigest()
    p = classifier.predict_proba(model, ds)
    post.roc_apply(post.roc_fit(p, ds.labels, ds.protected), p, ds.protected)
    post.ceo_apply(post.ceo_fit(p, ds.labels, ds.protected), p, ds.protected)
    assert hashlib.sha256(model.to_json().encode()).hexdigest() == digest


# --------------------------------------------------------------------------
# calibrated equalized odds
# --------------------------------------------------------------------------

def test_mixing_rate_example():
    assert post.mixing_rate(0.1, 0.3, 0.5) == pytest.approx(0.5)
    assert post.mixing_rate(0.3, 0.3, 0.5) == 0.0
    assert post.mixing_rate(0.2, 0.3, 0.1) == 0.0
    with pytest.raises(UndefinedMetricError):
        post.mixing_rate(0.0, 0.3, 0.0)


def test_generalized_costs():
    p = np.array([0.9, 0.6, 0.3, 0.2])
    y = np.array([1, 1, 0, 0])
    assert post.generalized_cost(p, y, "fnr", 0.5) == pytest.approx(0.25)
    assert post.generalized_cost(p, y, "fpr", 0.5) == pytest.approx(0.25)
    assert post.generalized_cost(p, y, "weighted", 0.25) == pytest.approx(0.25)


def test_ceo_equal_costs_no_mixing():
    p = np.array([0.8, 0.3, 0.8, 0.3])
    y = np.array([1, 0, 1, 0.0])
    s = np.array([0, 0, 1, 1.0])
    with pytest.warns(RuntimeWarning):
        pol = post.ceo_fit(p, y, s, "fnr")
    assert pol.mix_rates == (0.0, 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("cost", post.CEO_COSTS)
def test_ceo_equalises_costs(cost, seed):
    p, y, s = _scores(seed=seed)
    br = [y[s == g].mean() for g in (0, 1)]
    own = [post.generalized_cost(p[s == g], y[s == g], cost, br[g]) for g in (0, 1)]
    trivial = [post.generalized_cost(np.full((s == g).sum(), br[g]), y[s == g], cost, br[g]) for g in (0, 1)]
    pol = post.ceo_fit(p, y, s, cost)
    adj = post.ceo_apply(pol, p, s)
    after = [post.generalized_cost(adj[s == g], y[s == g], cost, br[g]) for g in (0, 1)]
    assert np.all((adj >= 0) & (adj <= 1))
    better = int(np.argmin(own))
    if trivial[better] >= own[1 - better]:
        assert abs(after[0] - after[1]) <= 0.01
    else:
        # the better group cannot be made as costly: full mixing, gap narrowed
        assert pol.mix_rates[better] == 1.0
        assert abs(after[0] - after[1]) < abs(own[0] - own[1])


def test_ceo_apply_limits():
    p = np.array([0.1, 0.9, 0.4, 0.6])
    s = np.array([0.0, 0.0, 1.0, 1.0])
    same = post.ceo_apply(CeoPolicy("fnr", (0.0, 0.0), (0.3, 0.7), True), p, s)
    np.testing.assert_array_equal(same, p)
    full = post.ceo_apply(CeoPolicy("fnr", (1.0, 0.0), (0.3, 0.7), True), p, s)
    np.testing.assert_allclose(full[:2], 0.3)
    np.testing.assert_array_equal(full[2:], p[2:])


def test_ceo_mixing_monotone_toward_base_rate():
    p, y, s = _scores()
    rows = s == 0
    br = y[rows].mean()
    gaps = [abs(post.ceo_apply(CeoPolicy("fnr", (m, 0.0), (br, 0.5), True), p, s)[rows].mean() - br)
            for m in np.linspace(0, 1, 11)]
    assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))


def test_ceo_errors():
    with pytest.raises(NotFittedError):
        post.ceo_apply(CeoPolicy(), np.array([0.5]), np.array([0.0]))
    with pytest.raises(ValueError):
        CeoPolicy(cost="tnr")
    with pytest.raises(ValueError):
        CeoPolicy(mix_rates=(1.5, 0.0))
