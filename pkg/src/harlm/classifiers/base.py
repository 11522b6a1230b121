"""Common model plumbing: normalisation, prediction, JSON persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar

import numpy as np

from harlm.dataset import LabeledDataset

MODEL_FORMAT = "harlm-model"
MODEL_VERSION = 1


class DegenerateDataError(ValueError):
    """Training data cannot support a classifier (e.g. a single class)."""


def check_trainable(data: LabeledDataset) -> None:
    present = np.unique(data.labels)
    if present.size < 2:
        raise DegenerateDataError("training data needs at least 2 distinct labels")
    if len(data) < data.n_classes:
        raise DegenerateDataError(f"{len(data)} rows for {data.n_classes} classes")


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Normalizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean=mean, std=std)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(mean=np.asarray(d["mean"], dtype=np.float64), std=np.asarray(d["std"], dtype=np.float64))


class ClassifierModel:
    """Base class of the three baselines.

    Subclasses implement ``_raw_scores`` on (already normalised) rows and the
    ``_params_to_dict`` / ``_params_from_dict`` pair.
    """

    kind: ClassVar[str] = ""
    registry: ClassVar[dict[str, type["ClassifierModel"]]] = {}

    def __init__(self, label_vocabulary, feature_names, normalization=None, hyperparameters=None):
        self.label_vocabulary = list(label_vocabulary)
        self.feature_names = list(feature_names)
        self.normalization: Normalizer | None = normalization
        self.hyperparameters: dict[str, Any] = dict(hyperparameters or {})

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.kind:
            ClassifierModel.registry[cls.kind] = cls

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _prepare(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return self.normalization(X) if self.normalization is not None else X

    def _raw_scores(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def scores(self, X) -> np.ndarray:
        """(N, K) class scores."""
        return self._raw_scores(self._prepare(X))

    def predict_indices(self, X) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the earlier label
        return np.argmax(self.scores(X), axis=1)

    def predict_labels(self, X) -> np.ndarray:
        vocab = np.asarray(self.label_vocabulary)
        return vocab[self.predict_indices(X)]

    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "label_vocabulary": self.label_vocabulary,
            "feature_names": self.feature_names,
            "hyperparameters": self.hyperparameters,
            "normalization": self.normalization.to_dict() if self.normalization is not None else None,
            "parameters": self._params_to_dict(),
        }

    def _params_to_dict(self) -> dict:
        raise NotImplementedError

    @classmethod
    def _params_from_dict(cls, d: dict, **common) -> "ClassifierModel":
        raise NotImplementedError

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path: str | Path) -> None:
        from harlm.io import atomic_write_text

        atomic_write_text(path, self.dumps() + "\n")

    @staticmethod
    def from_dict(d: dict) -> "ClassifierModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a harlm model file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model file version {d.get('version')}")
        cls = ClassifierModel.registry.get(d["kind"])
        if cls is None:
            raise ValueError(f"unknown model kind {d['kind']!r}")
        norm = Normalizer.from_dict(d["normalization"]) if d.get("normalization") else None
        return cls._params_from_dict(
            d["parameters"],
            label_vocabulary=d["label_vocabulary"],
            feature_names=d["feature_names"],
            normalization=norm,
            hyperparameters=d.get("hyperparameters", {}),
        )

    @staticmethod
    def loads(text: str) -> "ClassifierModel":
        return ClassifierModel.from_dict(json.loads(text))

    @staticmethod
    def load(path: str | Path) -> "ClassifierModel":
        return ClassifierModel.loads(Path(path).read_text(encoding="utf-8"))


def predict(model: ClassifierModel, fv) -> tuple[str, np.ndarray]:
    """Label and K scores for one feature vector or row."""
    row = fv.flat if hasattr(fv, "flat") and hasattr(fv, "channel_order") else np.asarray(fv, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError("predict expects a single row")
    s = model.scores(row)[0]
    return model.label_vocabulary[int(np.argmax(s))], s
