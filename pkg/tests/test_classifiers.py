import json
from collections import Counter

import numpy as np
import pytest
from oracles import best_stump_accuracy, central_diff, walk_tree

from harlm.classifiers import (
    ClassifierModel,
    DegenerateDataError,
    FeedForwardModel,
    RandomForestModel,
    Tree,
    predict,
    svm_objective,
    train,
    train_feedforward,
    train_linear_svm,
    train_random_forest,
)
from harlm.classifiers.net import forward, init_params, loss_and_grads, softmax
from harlm.classifiers.svm import hinge_objective, ovr_targets
from harlm.dataset import LabeledDataset
from harlm.evaluation import SplitKind, SplitSpec, make_split


def _data(X, y, vocab=None):
    y = np.asarray(y).astype(str)
    vocab = vocab or sorted(set(y.tolist()))
    return LabeledDataset(X, y, np.full(len(y), "s"), vocab, [f"f{i}" for i in range(X.shape[1])])


def _blobs(rng, k, n_per, d=2, sep=6.0, spread=1.0):
    centers = rng.normal(size=(k, d)) * sep
    X = np.concatenate([c + spread * rng.normal(size=(n_per, d)) for c in centers])
    y = np.repeat([f"c{i}" for i in range(k)], n_per)
    return X, y


def _xor(rng, n):
    corners = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    lab = np.array(["a", "b", "b", "a"])
    k = rng.integers(0, 4, n)
    return corners[k] + 0.12 * rng.normal(size=(n, 2)), lab[k]


def _acc(model, X, y):
    return float(np.mean(model.predict_labels(X) == np.asarray(y)))


FOUR = (np.array([[0.0, 0.0], [0.0, 1.0], [3.0, 0.0], [3.0, 1.0]]), ["left", "left", "right", "right"])


# ---- random forest ---------------------------------------------------------------

def test_forest_separable_toy():
    X, y = FOUR
    m = train_random_forest(_data(X, y), seed=0)
    assert _acc(m, X, y) == 1.0
    assert len(m.trees) == 100


def test_forest_deterministic():
    X, y = _blobs(np.random.default_rng(1), 3, 40, d=5)
    d = _data(X, y)
    assert train_random_forest(d, n_trees=20, seed=5).dumps() == train_random_forest(d, n_trees=20, seed=5).dumps()
    assert train_random_forest(d, n_trees=20, seed=5).dumps() != train_random_forest(d, n_trees=20, seed=6).dumps()


def test_forest_xor_beats_best_stump():
    rng = np.random.default_rng(2)
    Xtr, ytr = _xor(rng, 200)
    Xte, yte = _xor(rng, 200)
    stump = best_stump_accuracy(Xtr, ytr)
    m = train_random_forest(_data(Xtr, ytr), seed=0)
    assert stump <= 0.75
    assert _acc(m, Xte, yte) > 0.95


def test_forest_feature_candidates():
    X, y = _blobs(np.random.default_rng(3), 2, 30, d=63)
    m = train_random_forest(_data(X, y), n_trees=3, seed=0)
    assert m.hyperparameters["max_features"] == 8  # ceil(sqrt(63))


def test_forest_max_depth():
    X, y = _blobs(np.random.default_rng(4), 4, 50, d=3, sep=1.0)
    m = train_random_forest(_data(X, y), n_trees=5, max_depth=2, seed=0)
    for t in m.trees:
        depth = {0: 0}
        for i in range(t.n_nodes):
            if t.left[i] >= 0:
                depth[t.left[i]] = depth[t.right[i]] = depth[i] + 1
        assert max(depth.values()) <= 2


def test_forest_is_majority_vote_and_tree_walk_oracle(features6):
    train_d, test_d = make_split(features6, SplitSpec(SplitKind.SEEN, seed=0))
    m = train_random_forest(train_d, n_trees=15, seed=3)
    trees = json.loads(m.dumps())["parameters"]["trees"]
    assert trees[0] == m.trees[0].to_dict()
    vocab = m.label_vocabulary
    got = m.predict_labels(test_d.features)
    for i, row in enumerate(test_d.features):
        votes = Counter()
        for t in trees:
            counts = walk_tree(t, row)
            votes[int(np.argmax(counts))] += 1
        top = max(votes.values())
        want = vocab[min(k for k, v in votes.items() if v == top)]
        assert got[i] == want


def test_single_leaf_forest_predicts_class():
    vocab = ["a", "b", "c"]
    m = RandomForestModel(trees=[Tree.leaf([0, 0, 5])] * 4, label_vocabulary=vocab, feature_names=["x", "y"])
    label, scores = predict(m, np.array([1.0, 2.0]))
    assert label == "c"
    assert scores[2] == 1.0


# ---- linear svm ------------------------------------------------------------------

def test_svm_blobs():
    X, y = _blobs(np.random.default_rng(5), 2, 100, d=4)
    m = train_linear_svm(_data(X, y), seed=0)
    assert _acc(m, X, y) >= 0.99


def test_svm_scale_invariance():
    X, y = _blobs(np.random.default_rng(6), 3, 60, d=4, sep=2.0)
    a = train_linear_svm(_data(X, y), seed=0)
    b = train_linear_svm(_data(10 * X, y), seed=0)
    np.testing.assert_array_equal(a.predict_labels(X), b.predict_labels(10 * X))


def test_svm_objective_below_zero_weights():
    X, y = _blobs(np.random.default_rng(7), 3, 60, d=4, sep=1.5)
    d = _data(X, y)
    m = train_linear_svm(d, seed=0)
    Xn = m.normalization(X)
    zero = hinge_objective(np.zeros_like(m.weights), np.zeros_like(m.biases), Xn,
                           ovr_targets(d.label_indices(), d.n_classes), m.hyperparameters["lambda"])
    # direct evaluation: sum over heads of lam/2 |w|^2 + mean hinge
    Y = np.where(d.label_indices()[:, None] == np.arange(3)[None, :], 1.0, -1.0)
    direct = sum(
        0.5 * 1e-4 * float(m.weights[k] @ m.weights[k])
        + float(np.mean([max(0.0, 1 - Y[i, k] * (m.weights[k] @ Xn[i] + m.biases[k])) for i in range(len(X))]))
        for k in range(3)
    )
    assert svm_objective(m, d) == pytest.approx(direct, rel=1e-12)
    assert zero == pytest.approx(3.0)
    assert direct <= zero


def test_svm_deterministic():
    X, y = _blobs(np.random.default_rng(8), 3, 30, d=3)
    d = _data(X, y)
    assert train_linear_svm(d, seed=2).dumps() == train_linear_svm(d, seed=2).dumps()


# ---- feed-forward net ---------------------------------------------------------------

def test_net_three_blobs():
    X, y = _blobs(np.random.default_rng(9), 3, 100, d=4)
    m = train_feedforward(_data(X, y), seed=0)
    assert _acc(m, X, y) >= 0.98


def test_softmax_sums_to_one(rng):
    X, y = _blobs(rng, 3, 30, d=4)
    m = train_feedforward(_data(X, y), epochs=2, seed=0)
    s = m.scores(rng.normal(size=(200, 4)) * 50)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)
    z = rng.normal(size=(10, 5)) * 1000
    np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-9)


def gradient_check(rng, sizes=(6, 8, 5, 3), batch=5):
    """Max relative error of backprop against central differences for one random draw."""
    params = [(W.copy(), rng.normal(0, 0.1, size=b.shape)) for W, b in init_params(list(sizes), rng)]
    X = rng.normal(size=(batch, sizes[0]))
    y = rng.integers(0, sizes[-1], batch)
    _, grads = loss_and_grads(params, X, y)
    worst = 0.0
    for (W, b), (gW, gb) in zip(params, grads):
        for arr, g in ((W, gW), (b, gb)):
            num = central_diff(lambda: loss_and_grads(params, X, y)[0], arr)
            err = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-6)
            worst = max(worst, float(err.max()))
    return worst


def test_gradient_check_small_batch():
    assert gradient_check(np.random.default_rng(10)) <= 1e-4


def test_small_step_decreases_loss_by_grad_norm():
    rng = np.random.default_rng(11)
    params = init_params([5, 7, 3], rng)
    X = rng.normal(size=(8, 5))
    y = rng.integers(0, 3, 8)
    loss0, grads = loss_and_grads(params, X, y)
    g2 = sum(float((gW * gW).sum() + (gb * gb).sum()) for gW, gb in grads)
    devs = []
    for lr in (1e-2, 1e-3, 1e-4):
        stepped = [(W - lr * gW, b - lr * gb) for (W, b), (gW, gb) in zip(params, grads)]
        dl = loss_and_grads(stepped, X, y)[0] - loss0
        devs.append(abs(dl - (-lr * g2)) / (lr * g2))
    # first-order agreement, with the residual shrinking in proportion to lr
    assert devs[2] < 1e-3
    assert devs[1] < devs[0] and devs[2] < devs[1]
    assert devs[1] / devs[0] < 0.2 and devs[2] / devs[1] < 0.2


def test_zero_weight_net_ties_to_first_label():
    vocab = ["walking", "running", "sitting"]
    params = [(np.zeros((4, 3)), np.zeros(3)), (np.zeros((3, 3)), np.zeros(3))]
    m = FeedForwardModel(params, label_vocabulary=vocab, feature_names=list("abcd"))
    label, scores = predict(m, np.array([1.0, -2.0, 3.0, 0.5]))
    assert label == "walking"
    np.testing.assert_allclose(scores, 1 / 3, atol=1e-15)


def test_net_deterministic():
    X, y = _blobs(np.random.default_rng(12), 3, 30, d=3)
    d = _data(X, y)
    a = train_feedforward(d, hidden=(16,), epochs=3, seed=4)
    b = train_feedforward(d, hidden=(16,), epochs=3, seed=4)
    assert a.dumps() == b.dumps()


def test_forward_shapes():
    params = init_params([4, 6, 2], np.random.default_rng(0))
    logits, acts = forward(params, np.ones((3, 4)))
    assert logits.shape == (3, 2) and len(acts) == 2


# ---- shared behaviour -------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["rf", "svm", "dnn"])
def test_serialization_round_trip(tmp_path, kind):
    rng = np.random.default_rng(13)
    X, y = _blobs(rng, 4, 50, d=6, sep=2.0)
    kw = {"rf": {"n_trees": 10}, "svm": {}, "dnn": {"hidden": (16, 8), "epochs": 3}}[kind]
    m = train(kind, _data(X, y), seed=1, **kw)
    m.save(tmp_path / "m.json")
    back = ClassifierModel.load(tmp_path / "m.json")
    assert type(back) is type(m)
    rows = rng.normal(size=(1000, 6)) * 3
    if kind == "dnn":
        np.testing.assert_allclose(back.scores(rows), m.scores(rows), rtol=0, atol=1e-12)
    else:
        np.testing.assert_array_equal(back.scores(rows), m.scores(rows))
    np.testing.assert_array_equal(back.predict_labels(rows), m.predict_labels(rows))
    assert back.dumps() == m.dumps()


@pytest.mark.parametrize("kind", ["rf", "svm", "dnn"])
def test_degenerate_single_class(kind):
    X = np.arange(10.0).reshape(5, 2)
    with pytest.raises(DegenerateDataError):
        train(kind, _data(X, ["a"] * 5), seed=0)


def test_fewer_rows_than_classes():
    X = np.arange(4.0).reshape(2, 2)
    with pytest.raises(DegenerateDataError):
        train("rf", _data(X, ["a", "b"], vocab=["a", "b", "c"]), seed=0)


@pytest.mark.parametrize("kind", ["rf", "svm", "dnn"])
def test_dimension_mismatch(kind):
    X, y = FOUR
    m = train(kind, _data(X, y), seed=0, **({"n_trees": 3} if kind == "rf" else {}))
    with pytest.raises(ValueError):
        predict(m, np.zeros(3))


def test_normalization_recorded_with_unit_std_for_constant():
    X = np.column_stack([np.arange(10.0), np.full(10, 4.0)])
    m = train_linear_svm(_data(X, ["a", "b"] * 5), seed=0, epochs=2)
    assert m.normalization.std[1] == 1.0
    assert (m.normalization.std > 0).all()


def test_unknown_kind():
    with pytest.raises(ValueError):
        train("lstm", _data(*FOUR), seed=0)
