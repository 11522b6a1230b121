import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import direct_metrics, tally

from harlm.classifiers import train_random_forest
from harlm.dataset import LabeledDataset
from harlm.evaluation import (
    TABLE_COLUMNS,
    ConfusionMatrix,
    SplitError,
    SplitKind,
    SplitSpec,
    TooManyUnparseableError,
    confusion,
    evaluate,
    load_reports,
    make_split,
    metrics,
    render_report,
    render_seen_unseen_table,
)
from harlm.llm_client import UnparseableResponseError


def _ds(labels, subjects=None, datasets=None, d=2, seed=0):
    n = len(labels)
    X = np.random.default_rng(seed).normal(size=(n, d))
    return LabeledDataset(X, labels, subjects if subjects is not None else np.arange(n) % 5,
                          sorted(set(labels)), [f"f{i}" for i in range(d)],
                          datasets=None if datasets is None else np.asarray(datasets))


# ---- splits ------------------------------------------------------------------------

def test_unseen_subject_split_disjoint():
    labels = ["a", "b"] * 50
    subjects = [str(i % 10) for i in range(100)]
    tr, te = make_split(_ds(labels, subjects), SplitSpec(SplitKind.UNSEEN_SUBJECT, held_out_subjects=["3", "7"]))
    assert set(te.subjects) == {"3", "7"}
    assert not set(tr.subjects) & set(te.subjects)
    assert len(tr) + len(te) == 100


def test_seen_split_stratified():
    labels = [c for c in "abcde" for _ in range(100)]
    _, te = make_split(_ds(labels), SplitSpec(SplitKind.SEEN, seed=3, test_fraction=0.2))
    for c in "abcde":
        assert abs(int((te.labels == c).sum()) - 20) <= 1


def test_seen_split_deterministic_and_disjoint():
    data = _ds(["a", "b", "c"] * 40)
    a = make_split(data, SplitSpec(SplitKind.SEEN, seed=9))
    b = make_split(data, SplitSpec(SplitKind.SEEN, seed=9))
    np.testing.assert_array_equal(a[1].features, b[1].features)
    rows = {tuple(r) for r in a[0].features}
    assert not rows & {tuple(r) for r in a[1].features}


def test_cross_dataset_uses_shared_labels():
    labels = ["walking", "jogging", "sitting", "walking", "running", "cycling"]
    ds = ["W", "W", "W", "M", "M", "M"]
    tr, te = make_split(_ds(labels, datasets=ds),
                        SplitSpec(SplitKind.CROSS_DATASET, train_dataset="W", test_dataset="M"))
    # jogging is relabelled running; the intersection is computed independently here
    mapped_w = {"walking", "running", "sitting"}
    mapped_m = {"walking", "running", "cycling"}
    assert tr.label_vocabulary == te.label_vocabulary
    assert set(tr.label_vocabulary) == mapped_w & mapped_m
    assert all(type(v) is str for v in tr.label_vocabulary)
    assert set(tr.labels) == set(te.labels) == {"walking", "running"}


def test_split_errors():
    with pytest.raises(SplitError):
        make_split(_ds(["a", "a", "b"]), SplitSpec(SplitKind.SEEN))
    with pytest.raises(SplitError):
        make_split(_ds(["a", "b"] * 5), SplitSpec(SplitKind.UNSEEN_SUBJECT))
    with pytest.raises(SplitError):
        make_split(_ds(["a", "b"] * 5), SplitSpec(SplitKind.UNSEEN_SUBJECT, held_out_subjects=["zz"]))
    with pytest.raises(SplitError):
        SplitSpec(SplitKind.SEEN, test_fraction=1.0)


# ---- confusion and metrics -------------------------------------------------------------

def test_confusion_examples():
    cm = confusion(["a", "a", "b"], ["a", "b", "b"], ["a", "b"])
    assert cm.counts.tolist() == [[1, 0], [1, 1]]
    assert confusion(["x"] * 3, ["x"] * 3, ["x", "y"]).counts.tolist() == [[3, 0], [0, 0]]
    with pytest.raises(ValueError):
        confusion(["a"], ["a", "b"], ["a", "b"])
    with pytest.raises(ValueError):
        confusion(["q"], ["a"], ["a", "b"])


def test_confusion_against_tally(rng):
    vocab = ["w", "r", "s", "u", "d"]
    p = rng.choice(vocab, 500).tolist()
    t = rng.choice(vocab, 500).tolist()
    assert confusion(p, t, vocab).counts.tolist() == tally(p, t, vocab)


def test_metrics_examples():
    perfect = metrics(ConfusionMatrix(np.diag([3, 4, 5]), ["a", "b", "c"]))
    assert perfect.accuracy == 1.0 and perfect.macro_f1 == 1.0
    # one class never predicted and never present -> its ratios are 0
    r = metrics(ConfusionMatrix([[2, 0], [0, 0]], ["a", "b"]))
    assert r.precision.tolist() == [1.0, 0.0] and r.recall.tolist() == [1.0, 0.0]
    assert r.macro_f1 == 0.5
    r = metrics(ConfusionMatrix([[1, 1], [0, 2]], ["a", "b"]))
    assert r.accuracy == 0.75
    assert r.precision.tolist() == [1.0, 2 / 3]
    assert r.recall.tolist() == [0.5, 1.0]
    with pytest.raises(ValueError):
        metrics(ConfusionMatrix(np.zeros((2, 2)), ["a", "b"]))


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 6).flatmap(lambda k: st.lists(st.lists(st.integers(0, 50), min_size=k, max_size=k),
                                                       min_size=k, max_size=k)))
def test_metrics_against_direct(counts):
    if sum(map(sum, counts)) == 0:
        return
    k = len(counts)
    r = metrics(ConfusionMatrix(counts, [str(i) for i in range(k)]))
    acc, ps, rs, fs, mp, mr, mf = direct_metrics(counts)
    assert abs(r.accuracy - acc) <= 1e-12
    for a, b in zip(r.precision, ps):
        assert abs(a - b) <= 1e-12
    for a, b in zip(r.recall, rs):
        assert abs(a - b) <= 1e-12
    for a, b in zip(r.f1, fs):
        assert abs(a - b) <= 1e-12
    assert abs(r.macro_precision - mp) <= 1e-12
    assert abs(r.macro_recall - mr) <= 1e-12
    assert abs(r.macro_f1 - mf) <= 1e-12
    # accuracy equals micro-averaged precision and recall
    c = np.asarray(counts)
    assert abs(r.accuracy - np.trace(c) / c.sum()) <= 1e-12


def test_vocabulary_permutation_invariance(rng):
    vocab = list("abcd")
    p, t = rng.choice(vocab, 200), rng.choice(vocab, 200)
    base = metrics(confusion(p, t, vocab))
    perm = rng.permutation(4)
    v2 = [vocab[i] for i in perm]
    other = metrics(confusion(p, t, v2))
    assert other.accuracy == base.accuracy
    assert other.macro_f1 == pytest.approx(base.macro_f1, abs=1e-15)
    np.testing.assert_array_equal(other.f1, base.f1[perm])


def test_joint_permutation_invariance(rng):
    vocab = list("abc")
    p, t = rng.choice(vocab, 300), rng.choice(vocab, 300)
    order = rng.permutation(300)
    assert (confusion(p, t, vocab).counts == confusion(p[order], t[order], vocab).counts).all()


def test_confusion_addition_is_concatenation(rng):
    vocab = list("xyz")
    p, t = rng.choice(vocab, 120), rng.choice(vocab, 120)
    a, b, c = (confusion(p[s], t[s], vocab) for s in (slice(0, 40), slice(40, 90), slice(90, None)))
    whole = confusion(p, t, vocab).counts
    assert ((a + b) + c).counts.tolist() == (a + (b + c)).counts.tolist() == whole.tolist()
    with pytest.raises(ValueError):
        a + ConfusionMatrix(np.zeros((2, 2)), ["x", "y"])


# ---- evaluate ------------------------------------------------------------------------

def test_evaluate_gold_and_constant():
    data = _ds(["a", "b", "c"] * 10)
    gold = evaluate(lambda i: data.labels[i], data)
    assert gold.accuracy == 1.0 and gold.macro_f1 == 1.0
    const = evaluate(lambda i: "a", data)
    assert const.accuracy == pytest.approx(1 / 3)
    assert const.recall.tolist() == [1.0, 0.0, 0.0]


def test_evaluate_unparseable_budget():
    data = _ds(["a", "b"] * 10)

    def flaky(bad):
        def f(i):
            if i < bad:
                raise UnparseableResponseError("???")
            return data.labels[i]
        return f

    r = evaluate(flaky(4), data)
    assert r.extra["unparseable"] == 4 and r.confusion.total == 16
    with pytest.raises(TooManyUnparseableError):
        evaluate(flaky(5), data)


def test_evaluate_model(features6):
    from harlm.evaluation import SplitKind as K

    tr, te = make_split(features6, SplitSpec(K.SEEN, seed=1))
    m = train_random_forest(tr, n_trees=10, seed=0)
    r = evaluate(m, te, {"dataset": "SYN"})
    assert r.config["model"]["kind"] == m.kind
    assert r.accuracy == float(np.mean(m.predict_labels(te.features) == te.labels))
    assert len(r.config_fingerprint) > 8


# ---- rendering -------------------------------------------------------------------------

def _report(acc_counts, dataset="SHOAIB", model="rf"):
    r = metrics(ConfusionMatrix(acc_counts, ["a", "b"]))
    r.config = {"dataset": dataset, "model_name": model}
    return r


def test_render_perfect_row():
    md = render_report([_report([[5, 0], [0, 5]])])
    lines = md.splitlines()
    assert lines[0] == "| " + " | ".join(TABLE_COLUMNS) + " |"
    assert lines[2] == "| SHOAIB | rf | 1.0000 | 1.0000 | 1.0000 | 1.0000 |"
    csv_text = render_report([_report([[5, 0], [0, 5]])], "CSV")
    assert csv_text.splitlines()[1] == "SHOAIB,rf,1.0000,1.0000,1.0000,1.0000"
    with pytest.raises(ValueError):
        render_report([_report([[1, 0], [0, 1]])], "HTML")
    with pytest.raises(ValueError):
        render_report([])


def test_render_keeps_input_order():
    md = render_report([_report([[1, 0], [0, 1]], "B"), _report([[1, 0], [0, 1]], "A")])
    assert [ln.split("|")[1].strip() for ln in md.splitlines()[2:]] == ["B", "A"]


def test_json_round_trip_byte_identical():
    reports = [_report([[3, 1], [2, 4]]), _report([[1, 0], [0, 9]], "HHAR", "svm")]
    text = render_report(reports, "JSON")
    back = load_reports(text)
    assert render_report(back, "JSON") == text
    assert json.loads(text)[0]["schema_version"] == 1


def test_seen_unseen_table_cells():
    models = ["rf", "svm", "dnn"]
    datasets = ["HHAR", "MOTIONSENSE", "SHOAIB"]
    cells = {(m, d, s): 0.5 + 0.01 * i for i, (m, d, s) in
             enumerate((m, d, s) for m in models for d in datasets for s in ("seen", "unseen"))}
    md = render_seen_unseen_table(cells)
    rows = md.splitlines()[2:]
    assert len(rows) == 3
    assert sum(len(r.strip("|").split("|")) - 1 for r in rows) == 18
    assert "-" not in "".join(r.split("|", 2)[2] for r in rows).replace(".", "")
