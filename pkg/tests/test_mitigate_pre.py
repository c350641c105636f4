from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import ks_2samp

from conftest import make_synthetic
from faircredit import mitigate_pre as pre
from faircredit.dataset import DataError, TabularDataset


def _tiny():
    # 4 unprivileged (2 favourable), 6 privileged (4 favourable)
    s = np.array([0] * 4 + [1] * 6, float)
    y = np.array([1, 1, 0, 0, 1, 1, 1, 1, 0, 0], float)
    return TabularDataset(np.arange(10, dtype=float)[:, None], y, s, np.ones(10), ["x"], [True])


def _oracle_weights(y, s):
    """Exact rational reweighing weights."""
    n = len(y)
    out = {}
    for g in (0, 1):
        for c in (0, 1):
            ng = sum(1 for si in s if si == g)
            nc = sum(1 for yi in y if yi == c)
            ngc = sum(1 for yi, si in zip(y, s) if si == g and yi == c)
            out[g, c] = Fraction(ng * nc, n * ngc)
    return out


def test_reweighing_hand_case():
    ds = _tiny()
    rmap = pre.reweighing_map(ds)
    assert rmap.weights[0, 1] == pytest.approx(1.2)
    oracle = _oracle_weights(ds.labels.astype(int), ds.protected.astype(int))
    for (g, c), w in oracle.items():
        assert rmap.weights[g, c] == pytest.approx(float(w), abs=1e-15)


def test_reweighing_independent_data_is_identity():
    s = np.array([0, 0, 1, 1] * 5, float)
    y = np.array([0, 1, 0, 1] * 5, float)
    ds = TabularDataset(np.zeros((20, 1)), y, s, np.ones(20), ["x"])
    np.testing.assert_allclose(pre.reweigh(ds).weights, 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_reweighing_invariants(seed):
    ds = make_synthetic(seed=seed)
    out = pre.reweigh(ds)
    w = out.weights
    assert w.sum() == pytest.approx(len(ds), abs=1e-9)
    rates = [np.dot(w[ds.protected == g], ds.labels[ds.protected == g]) / w[ds.protected == g].sum()
             for g in (0, 1)]
    assert abs(rates[0] - rates[1]) <= 1e-12
    np.testing.assert_array_equal(out.labels, ds.labels)
    np.testing.assert_array_equal(out.protected, ds.protected)
    np.testing.assert_array_equal(out.X, ds.X)


def test_reweighing_empty_cell():
    s = np.array([0, 0, 1, 1], float)
    y = np.array([1, 1, 0, 1], float)
    with pytest.raises(DataError, match="empty"):
        pre.reweigh(TabularDataset(np.zeros((4, 1)), y, s, np.ones(4), ["x"]))


# --------------------------------------------------------------------------
# LFR
# --------------------------------------------------------------------------

@pytest.mark.parametrize("smooth", [0.0, pre.SMOOTH])
def test_lfr_gradient_matches_finite_differences(smooth):
    ds = make_synthetic(n=80, d=3, seed=2)
    Xs = (ds.X - ds.X.mean(0)) / ds.X.std(0)
    rng = np.random.default_rng(0)
    V = rng.normal(size=(4, 3))
    u = rng.normal(size=4)
    args = (Xs, ds.labels, ds.protected, 2.0, 0.5, 1.0, 1.3)
    _, _, gV, gu = pre.lfr_objective(V, u, *args, smooth=smooth)
    f = lambda V_, u_: pre.lfr_objective(V_, u_, *args, with_grad=False, smooth=smooth)[0]
    h = 1e-6
    fdV = np.zeros_like(V)
    for idx in np.ndindex(V.shape):
        E = np.zeros_like(V)
        E[idx] = h
        fdV[idx] = (f(V + E, u) - f(V - E, u)) / (2 * h)
    fdu = np.array([(f(V, u + h * e) - f(V, u - h * e)) / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(gV, fdV, rtol=1e-4, atol=1e-7)
    np.testing.assert_allclose(gu, fdu, rtol=1e-4, atol=1e-7)


def test_lfr_fairness_term_dominant():
    ds = make_synthetic(n=300, d=3, seed=1)
    m = pre.lfr_fit(ds, k=5, Az=1.0, Ax=0.0, Ay=0.0, max_iter=2000)
    Xs = (ds.X - m.mean) / m.scale
    # read the exact (unsmoothed) parity gap
    _, (Lz, _, _) = pre.lfr_objective(m.prototypes, np.log(m.w / (1 - m.w)), Xs, ds.labels,
                                      ds.protected, 1.0, 0.0, 0.0, with_grad=False, smooth=0.0)
    assert Lz < 0.02


def test_lfr_memorises_with_k_equal_n():
    ds = make_synthetic(n=12, d=2, seed=3)
    m = pre.lfr_fit(ds, k=12, Az=0.0, Ax=1.0, Ay=0.0, max_iter=2000, temperature=0.05)
    _, (_, Lx, _) = pre.lfr_objective(m.prototypes, np.zeros(12), (ds.X - m.mean) / m.scale,
                                      ds.labels, ds.protected, 0.0, 1.0, 0.0, 0.05, with_grad=False)
    assert Lx < 1e-3


def test_lfr_loss_monotone_and_memberships(synthetic):
    m = pre.lfr_fit(synthetic, k=5, max_iter=100)
    assert np.all(np.diff(m.loss_history) <= 0)
    M = pre.memberships(m, synthetic.X)
    np.testing.assert_allclose(M.sum(1), 1.0, atol=1e-12)
    assert np.all(M >= 0)


def test_lfr_transform_hull_and_labels(synthetic):
    m = pre.lfr_fit(synthetic, k=5, max_iter=100)
    out = pre.lfr_transform(m, synthetic)
    P = m.prototypes_raw()
    assert np.all(np.isfinite(out.X))
    assert np.all(out.X >= P.min(0) - 1e-9) and np.all(out.X <= P.max(0) + 1e-9)
    np.testing.assert_array_equal(out.labels, synthetic.labels)
    np.testing.assert_array_equal(out.protected, synthetic.protected)


def test_lfr_relabel(synthetic):
    m = pre.lfr_fit(synthetic, k=5, Az=0.0, max_iter=200)
    out = pre.lfr_transform(m, synthetic, relabel=True)
    expected = (pre.lfr_predict_proba(m, synthetic.X) >= m.threshold).astype(float)
    np.testing.assert_array_equal(out.labels, expected)


def test_lfr_sharp_membership_reproduces_prototype(synthetic):
    m = pre.lfr_fit(synthetic, k=4, max_iter=20, temperature=1e-4)
    row = m.prototypes_raw()[2][None, :]
    ds = TabularDataset(np.vstack([row, row]), [1, 0], [0, 1], np.ones(2), synthetic.feature_names)
    np.testing.assert_allclose(pre.lfr_transform(m, ds).X[0], row[0], atol=1e-9)


def test_lfr_errors(synthetic):
    with pytest.raises(ValueError):
        pre.lfr_fit(synthetic, k=1)
    m = pre.lfr_fit(synthetic, k=3, max_iter=5)
    other = TabularDataset(np.zeros((4, 2)), [1, 0, 1, 0], [0, 1, 0, 1], np.ones(4), ["a", "b"])
    with pytest.raises(ValueError, match="dimension"):
        pre.lfr_transform(m, other)


# --------------------------------------------------------------------------
# distribution repair
# --------------------------------------------------------------------------

def _two_groups(a, b):
    x = np.array(list(a) + list(b), float)[:, None]
    s = np.array([0] * len(a) + [1] * len(b), float)
    y = np.array([1, 0] * (len(x) // 2) + [1] * (len(x) % 2), float)
    return TabularDataset(x, y, s, np.ones(len(x)), ["x"], [True])


def test_dir_identity_at_zero(german):
    assert pre.dir_repair(german, 0.0) is german


def test_dir_hand_case():
    out = pre.dir_repair(_two_groups([1, 2, 3], [3, 4, 5]), 1.0)
    np.testing.assert_allclose(out.X[:3, 0], [2, 3, 4])
    np.testing.assert_allclose(out.X[3:, 0], [2, 3, 4])


def test_dir_full_repair_continuous():
    ds = make_synthetic(n=600, d=3, seed=4)
    out = pre.dir_repair(ds, 1.0)
    for j in range(3):
        before = ks_2samp(ds.X[ds.protected == 0, j], ds.X[ds.protected == 1, j]).statistic
        after = ks_2samp(out.X[out.protected == 0, j], out.X[out.protected == 1, j]).statistic
        assert after < 0.02 < before


def test_dir_full_repair_within_quantisation(german):
    # tied values move together, so the remaining gap is bounded by the largest tie block
    out = pre.dir_repair(german, 1.0)
    for j in np.flatnonzero(german.numeric):
        tie = max(np.unique(german.X[german.protected == g, j], return_counts=True)[1].max()
                  / (german.protected == g).sum() for g in (0, 1))
        after = ks_2samp(out.X[out.protected == 0, j], out.X[out.protected == 1, j]).statistic
        assert after <= tie + 1e-12


def test_dir_monotone_in_level_and_rank_preserving(german):
    levels = [0.0, 0.25, 0.5, 0.75, 1.0]
    outs = [pre.dir_repair(german, lv).X for lv in levels]
    for j in np.flatnonzero(german.numeric):
        cols = np.array([o[:, j] for o in outs])
        d = np.diff(cols, axis=0)
        # each value moves one way only
        assert np.all((d >= -1e-12).all(0) | (d <= 1e-12).all(0))
        for g in (0, 1):
            rows = german.protected == g
            x, r = german.X[rows, j], outs[-1][rows, j]
            order = np.argsort(x, kind="stable")
            assert np.all(np.diff(r[order]) >= -1e-12)


def test_dir_leaves_categoricals_labels_protected(german):
    out = pre.dir_repair(german, 1.0)
    np.testing.assert_array_equal(out.X[:, ~german.numeric], german.X[:, ~german.numeric])
    np.testing.assert_array_equal(out.labels, german.labels)
    np.testing.assert_array_equal(out.protected, german.protected)


def test_dir_quantile_maps_monotone(german):
    plan = pre.dir_fit(german, 1.0)
    q = np.linspace(0, 1, 101)
    for fr in plan.features:
        for g in (0, 1):
            assert np.all(np.diff(fr.quantile(g, q)) >= 0)


def test_dir_level_out_of_range(german):
    with pytest.raises(ValueError):
        pre.dir_repair(german, 1.5)
