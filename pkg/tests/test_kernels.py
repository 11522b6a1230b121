"""The numba kernels and their numpy fallbacks must agree."""
import numpy as np
import pytest

from harlm import _accel, kernels
from harlm.features import _power


def _both(monkeypatch, fn):
    monkeypatch.setenv("HARLM_DISABLE_NUMBA", "0")
    assert _accel.numba_enabled()
    a = fn()
    monkeypatch.setenv("HARLM_DISABLE_NUMBA", "1")
    assert not _accel.numba_enabled()
    b = fn()
    return a, b


@pytest.mark.parametrize("flag,expected", [("", True), ("0", True), ("false", True), ("1", False),
                                           ("yes", False), ("true", False)])
def test_flag_parsing(monkeypatch, flag, expected):
    monkeypatch.setenv("HARLM_DISABLE_NUMBA", flag)
    assert _accel.numba_enabled() is (expected and _accel.HAVE_NUMBA)


def test_time_stats(monkeypatch, rng):
    batch = rng.normal(size=(40, 200, 9)) * 3 + 1
    a, b = _both(monkeypatch, lambda: kernels.time_stats(batch))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(a[..., 2], b[..., 2])  # range is exact


def test_freq_stats(monkeypatch, rng):
    power = _power(rng.normal(size=(30, 200, 9)), None)
    power[3, 2] = 0.0  # zero-power convention on both paths
    a, b = _both(monkeypatch, lambda: kernels.freq_stats(power, 0.25, 0.25, 3.0))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    assert (a[3, 2] == 0).all() and (b[3, 2] == 0).all()


def test_best_split_identical(monkeypatch, rng):
    X = np.round(rng.normal(size=(300, 12)), 1)  # ties in feature values
    y = (X[:, 0] + X[:, 3] > 0).astype(np.int64) + (X[:, 5] > 0.5)
    idx = rng.choice(300, 250).astype(np.int64)
    feats = rng.permutation(12).astype(np.int64)
    a, b = _both(monkeypatch, lambda: kernels.best_split(X, y, idx, 3, feats, 4))
    assert a == b


def test_best_split_constant_features(monkeypatch):
    X = np.ones((10, 3))
    y = np.array([0, 1] * 5, dtype=np.int64)
    idx = np.arange(10, dtype=np.int64)
    a, b = _both(monkeypatch, lambda: kernels.best_split(X, y, idx, 2, np.arange(3, dtype=np.int64), 1))
    assert a == b
    assert a[0] == -1


def test_tree_apply(monkeypatch, rng):
    n_int = 63
    left = np.full(2 * n_int + 1, -1, dtype=np.int64)
    right = np.full(2 * n_int + 1, -1, dtype=np.int64)
    left[:n_int] = 2 * np.arange(n_int) + 1
    right[:n_int] = 2 * np.arange(n_int) + 2
    feature = rng.integers(0, 5, size=left.size).astype(np.int64)
    threshold = rng.normal(size=left.size)
    X = rng.normal(size=(500, 5))
    a, b = _both(monkeypatch, lambda: kernels.tree_apply(feature, threshold, left, right, X))
    np.testing.assert_array_equal(a, b)
    assert (left[a] == -1).all()


def test_hinge_sgd(monkeypatch, rng):
    X = rng.normal(size=(400, 10))
    Y = np.where(rng.random((400, 3)) < 0.3, 1.0, -1.0)
    order = rng.permutation(400).astype(np.int64)

    def run():
        W = np.zeros((3, 10))
        b = np.zeros(3)
        t = kernels.hinge_sgd(X, Y, W, b, order, 1e-3, 0.05, 7)
        return W, b, t

    (Wa, ba, ta), (Wb, bb, tb) = _both(monkeypatch, run)
    assert ta == tb == 407
    # dot-product summation order may differ in the last ulp
    np.testing.assert_allclose(Wa, Wb, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(ba, bb, rtol=1e-9, atol=1e-12)


def test_feature_pipeline_paths_agree(monkeypatch, window_set):
    from harlm.features import extract_all

    a, b = _both(monkeypatch, lambda: extract_all(window_set).features)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_forest_paths_agree(monkeypatch, features6):
    from harlm.classifiers import train_random_forest

    a, b = _both(monkeypatch, lambda: train_random_forest(features6, n_trees=5, seed=1).dumps())
    assert a == b
