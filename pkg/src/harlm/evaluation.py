"""Splits, confusion matrices, metrics and report rendering."""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from harlm.dataset import LabeledDataset
from harlm.ingest.labels import DEFAULT_CROSS_DATASET_MAP, label_sort_key
from harlm.io import fingerprint

REPORT_SCHEMA_VERSION = 1


class SplitKind(str, enum.Enum):
    SEEN = "SEEN"
    UNSEEN_SUBJECT = "UNSEEN_SUBJECT"
    CROSS_DATASET = "CROSS_DATASET"


class SplitError(ValueError):
    pass


@dataclass
class SplitSpec:
    kind: SplitKind
    seed: int = 0
    test_fraction: float = 0.2
    held_out_subjects: list[str] = field(default_factory=list)
    train_dataset: str | None = None
    test_dataset: str | None = None
    label_map: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CROSS_DATASET_MAP))

    def __post_init__(self):
        self.kind = SplitKind(self.kind)
        if self.kind is SplitKind.SEEN and not 0.0 < self.test_fraction < 1.0:
            raise SplitError("test_fraction must be in (0, 1)")
        self.held_out_subjects = [str(s) for s in self.held_out_subjects]

    def as_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind.value, "seed": self.seed}
        if self.kind is SplitKind.SEEN:
            d["test_fraction"] = self.test_fraction
        elif self.kind is SplitKind.UNSEEN_SUBJECT:
            d["held_out_subjects"] = list(self.held_out_subjects)
        else:
            d.update(train_dataset=self.train_dataset, test_dataset=self.test_dataset,
                     label_map=dict(sorted(self.label_map.items())))
        return d


def _stratified(labels: np.ndarray, frac: float, rng: np.random.Generator) -> np.ndarray:
    test = []
    for lab in sorted(set(labels), key=label_sort_key):
        idx = np.flatnonzero(labels == lab)
        if idx.size < 2:
            raise SplitError(f"class {lab!r} has fewer than 2 samples; cannot stratify")
        k = int(round(frac * idx.size))
        k = min(max(k, 1), idx.size - 1)
        test.append(rng.permutation(idx)[:k])
    return np.sort(np.concatenate(test))


def make_split(data: LabeledDataset, spec: SplitSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Train/test partition according to ``spec``.

    SEEN: per-class stratified random split.  UNSEEN_SUBJECT: every row of a
    held-out subject goes to test.  CROSS_DATASET: train on one dataset, test
    on another, both restricted to their shared (mapped) labels.
    """
    n = len(data)
    if spec.kind is SplitKind.SEEN:
        rng = np.random.default_rng(spec.seed)
        test_idx = _stratified(data.labels, spec.test_fraction, rng)
        mask = np.zeros(n, dtype=bool)
        mask[test_idx] = True
        return data.take(np.flatnonzero(~mask)), data.take(test_idx)

    if spec.kind is SplitKind.UNSEEN_SUBJECT:
        held = set(spec.held_out_subjects)
        if not held:
            raise SplitError("UNSEEN_SUBJECT split needs at least one held-out subject")
        missing = held - set(data.subjects)
        if missing:
            raise SplitError(f"held-out subjects not in data: {sorted(missing)}")
        mask = np.isin(data.subjects, list(held))
        train, test = data.take(np.flatnonzero(~mask)), data.take(np.flatnonzero(mask))
        assert not set(train.subjects) & set(test.subjects)
        if len(train) == 0:
            raise SplitError("no training rows left after holding out subjects")
        return train, test

    # CROSS_DATASET
    lm = spec.label_map
    mapped = np.array([lm.get(x, x) for x in data.labels])
    a = np.flatnonzero(data.datasets == spec.train_dataset)
    b = np.flatnonzero(data.datasets == spec.test_dataset)
    if a.size == 0 or b.size == 0:
        raise SplitError(f"datasets {spec.train_dataset!r}/{spec.test_dataset!r} not both present")
    shared = {str(x) for x in mapped[a]} & {str(x) for x in mapped[b]}
    if not shared:
        raise SplitError("train and test datasets share no labels")
    vocab = sorted(shared, key=label_sort_key)
    relabeled = replace(data, labels=mapped, label_vocabulary=sorted({str(x) for x in mapped}, key=label_sort_key))
    keep = np.isin(mapped, vocab)
    train = relabeled.take(a[keep[a]], label_vocabulary=vocab)
    test = relabeled.take(b[keep[b]], label_vocabulary=vocab)
    return train, test


# --------------------------------------------------------------------------
# confusion matrix and metrics
# --------------------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) rows truth, columns prediction
    label_vocabulary: list[str]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.label_vocabulary)
        if self.counts.shape != (k, k):
            raise ValueError("counts must be K x K")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.label_vocabulary != self.label_vocabulary:
            raise ValueError("vocabularies differ")
        return ConfusionMatrix(self.counts + other.counts, self.label_vocabulary)


def confusion(preds: Sequence[str], truth: Sequence[str], vocab: Sequence[str]) -> ConfusionMatrix:
    preds = np.asarray(preds).astype(str)
    truth = np.asarray(truth).astype(str)
    if preds.shape != truth.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions vs {truth.size} labels")
    lookup = {lab: i for i, lab in enumerate(vocab)}
    k = len(vocab)
    try:
        p = np.fromiter((lookup[x] for x in preds), dtype=np.int64, count=preds.size)
        t = np.fromiter((lookup[x] for x in truth), dtype=np.int64, count=truth.size)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} is not in the vocabulary") from None
    counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, list(vocab))


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.divide(a, b, out=np.zeros_like(a, dtype=np.float64), where=b != 0)


@dataclass
class MetricsReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: ConfusionMatrix
    config_fingerprint: str = ""
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def label_vocabulary(self) -> list[str]:
        return self.confusion.label_vocabulary

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "label_vocabulary": self.label_vocabulary,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "confusion": self.confusion.counts.tolist(),
            "config_fingerprint": self.config_fingerprint,
            "config": self.config,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            accuracy=d["accuracy"],
            precision=np.asarray(d["precision"], dtype=np.float64),
            recall=np.asarray(d["recall"], dtype=np.float64),
            f1=np.asarray(d["f1"], dtype=np.float64),
            macro_precision=d["macro_precision"],
            macro_recall=d["macro_recall"],
            macro_f1=d["macro_f1"],
            confusion=ConfusionMatrix(np.asarray(d["confusion"]), d["label_vocabulary"]),
            config_fingerprint=d.get("config_fingerprint", ""),
            config=d.get("config", {}),
            extra=d.get("extra", {}),
        )


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy plus one-vs-rest precision/recall/F1 per class and their macro means.

    Any 0/0 ratio is taken as 0.
    """
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(c)
    pred_pos = c.sum(axis=0)
    actual_pos = c.sum(axis=1)
    precision = _safe_div(tp, pred_pos)
    recall = _safe_div(tp, actual_pos)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        confusion=cm,
    )


class TooManyUnparseableError(RuntimeError):
    pass


MAX_UNPARSEABLE_FRACTION = 0.2


def evaluate(
    predictor: Any,
    test: LabeledDataset,
    config: Mapping[str, Any] | None = None,
) -> MetricsReport:
    """Score ``predictor`` on ``test``.

    ``predictor`` is a trained :class:`~harlm.classifiers.ClassifierModel`
    or a callable mapping row index -> label (e.g. an LLM pipeline), which may
    raise :class:`~harlm.llm_client.UnparseableResponseError`; such rows are
    excluded and counted, and more than 20% of them is an error.
    """
    from harlm.llm_client import UnparseableResponseError

    vocab = test.label_vocabulary
    config = dict(config or {})
    unparseable = 0
    if hasattr(predictor, "predict_labels"):
        if list(predictor.feature_names) != list(test.feature_names):
            raise ValueError("model and test data have different feature columns")
        preds = predictor.predict_labels(test.features)
        truth = test.labels
        if list(predictor.label_vocabulary) != list(vocab):
            vocab = sorted(set(vocab) | set(predictor.label_vocabulary), key=label_sort_key)
        config.setdefault("model", {"kind": predictor.kind, "hyperparameters": predictor.hyperparameters})
    else:
        got, keep = [], []
        for i in range(len(test)):
            try:
                got.append(predictor(i))
                keep.append(i)
            except UnparseableResponseError:
                unparseable += 1
        if len(test) and unparseable / len(test) > MAX_UNPARSEABLE_FRACTION:
            raise TooManyUnparseableError(f"{unparseable} of {len(test)} responses unparseable")
        preds = np.asarray(got, dtype=str)
        truth = test.labels[np.asarray(keep, dtype=np.int64)]
    cm = confusion(preds, truth, vocab)
    report = metrics(cm)
    report.config = config
    report.config_fingerprint = fingerprint(config)
    report.extra = {"n_test": int(len(test)), "unparseable": unparseable}
    return report


# --------------------------------------------------------------------------
# report rendering
# --------------------------------------------------------------------------

TABLE_COLUMNS = ("Dataset", "Model", "Accuracy", "Macro Precision", "Macro Recall", "Macro F1")


def _row(r: MetricsReport) -> list[str]:
    return [
        str(r.config.get("dataset", "")),
        str(r.config.get("model_name", r.config.get("model", {}).get("kind", ""))),
        f"{r.accuracy:.4f}",
        f"{r.macro_precision:.4f}",
        f"{r.macro_recall:.4f}",
        f"{r.macro_f1:.4f}",
    ]


def render_report(reports: Sequence[MetricsReport], fmt: str = "MARKDOWN_TABLE") -> str:
    """Render reports as ``JSON``, ``CSV`` or ``MARKDOWN_TABLE`` (input order kept)."""
    if not reports:
        raise ValueError("no reports to render")
    fmt = fmt.upper()
    if fmt == "JSON":
        return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2) + "\n"
    rows = [_row(r) for r in reports]
    if fmt == "CSV":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        w.writerows(rows)
        return buf.getvalue()
    if fmt in ("MARKDOWN", "MARKDOWN_TABLE"):
        lines = ["| " + " | ".join(TABLE_COLUMNS) + " |", "|" + "---|" * len(TABLE_COLUMNS)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def render_seen_unseen_table(cells: Mapping[tuple[str, str, str], float]) -> str:
    """Markdown grid keyed by (model, dataset, setting) -> accuracy, one row per model."""
    models = sorted({k[0] for k in cells})
    datasets = sorted({k[1] for k in cells})
    settings = ["seen", "unseen"]
    head = ["Model"] + [f"{d} {s}" for d in datasets for s in settings]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for m in models:
        vals = []
        for d in datasets:
            for s in settings:
                v = cells.get((m, d, s))
                vals.append("-" if v is None else f"{v:.4f}")
        lines.append("| " + " | ".join([m] + vals) + " |")
    return "\n".join(lines) + "\n"


def load_reports(text: str) -> list[MetricsReport]:
    data = json.loads(text)
    if isinstance(data, dict):
        data = [data]
    return [MetricsReport.from_dict(d) for d in data]


PredictFn = Callable[[int], str]
