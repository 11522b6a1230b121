"""Labelled feature matrices and the feature CSV format."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from harlm.ingest.labels import label_sort_key

FEATURE_META_COLUMNS = ("dataset", "subject", "activity", "fs")


@dataclass
class LabeledDataset:
    features: np.ndarray  # (N, D)
    labels: np.ndarray  # (N,) canonical label strings
    subjects: np.ndarray  # (N,)
    label_vocabulary: list[str]
    feature_names: list[str]
    datasets: np.ndarray | None = None
    fs: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(str)
        self.subjects = np.asarray(self.subjects).astype(str)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be 2-D")
        if self.features.shape[1] != len(self.feature_names):
            raise ValueError(
                f"{self.features.shape[1]} feature columns but {len(self.feature_names)} names"
            )
        if len(self.labels) != n or len(self.subjects) != n:
            raise ValueError("labels/subjects length must match feature rows")
        if len(set(self.label_vocabulary)) != len(self.label_vocabulary):
            raise ValueError("label_vocabulary has duplicates")
        unknown = set(self.labels) - set(self.label_vocabulary)
        if unknown:
            raise ValueError(f"labels outside vocabulary: {sorted(unknown)}")
        if self.datasets is None:
            self.datasets = np.full(n, "", dtype=object).astype(str)
        else:
            self.datasets = np.asarray(self.datasets).astype(str)
        if self.fs is None:
            self.fs = np.full(n, np.nan)
        else:
            self.fs = np.asarray(self.fs, dtype=np.float64)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.label_vocabulary)

    def label_indices(self) -> np.ndarray:
        lookup = {lab: i for i, lab in enumerate(self.label_vocabulary)}
        return np.fromiter((lookup[x] for x in self.labels), dtype=np.int64, count=len(self))

    def take(self, idx, label_vocabulary: Sequence[str] | None = None) -> "LabeledDataset":
        idx = np.asarray(idx)
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            subjects=self.subjects[idx],
            datasets=self.datasets[idx],
            fs=self.fs[idx],
            label_vocabulary=list(label_vocabulary or self.label_vocabulary),
            extra=dict(self.extra),
        )

    def select_columns(self, names: Sequence[str]) -> "LabeledDataset":
        pos = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise KeyError(f"feature columns not present: {missing}")
        cols = [pos[n] for n in names]
        return replace(self, features=self.features[:, cols], feature_names=list(names))

    @classmethod
    def concat(cls, parts: Sequence["LabeledDataset"]) -> "LabeledDataset":
        """Row-concatenate, keeping only feature columns shared by every part."""
        shared = [n for n in parts[0].feature_names if all(n in p.feature_names for p in parts[1:])]
        parts = [p.select_columns(shared) for p in parts]
        vocab = sorted({lab for p in parts for lab in p.label_vocabulary}, key=label_sort_key)
        return cls(
            features=np.concatenate([p.features for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            subjects=np.concatenate([p.subjects for p in parts]),
            label_vocabulary=vocab,
            feature_names=shared,
            datasets=np.concatenate([p.datasets for p in parts]),
            fs=np.concatenate([p.fs for p in parts]),
        )


def vocabulary_of(labels) -> list[str]:
    return sorted(set(np.asarray(labels).astype(str)), key=label_sort_key)


def _g(v: float) -> str:
    return format(float(v), ".17g")


def features_to_csv_text(data: LabeledDataset) -> str:
    lines = [",".join(FEATURE_META_COLUMNS + tuple(data.feature_names))]
    for i in range(len(data)):
        cells = [str(data.datasets[i]), str(data.subjects[i]), str(data.labels[i]), _g(data.fs[i])]
        cells.extend(_g(v) for v in data.features[i])
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_features_csv(data: LabeledDataset, path: str | Path) -> None:
    from harlm.io import atomic_write_text

    atomic_write_text(path, features_to_csv_text(data))


def read_features_csv(path: str | Path, label_vocabulary: Sequence[str] | None = None) -> LabeledDataset:
    df = pd.read_csv(path, dtype={"dataset": str, "subject": str, "activity": str}, keep_default_na=False)
    missing = [c for c in FEATURE_META_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: not a feature CSV, missing columns {missing}")
    names = [c for c in df.columns if c not in FEATURE_META_COLUMNS]
    labels = df["activity"].to_numpy().astype(str)
    return LabeledDataset(
        features=df[names].to_numpy(dtype=np.float64) if names else np.zeros((len(df), 0)),
        labels=labels,
        subjects=df["subject"].to_numpy().astype(str),
        label_vocabulary=list(label_vocabulary) if label_vocabulary else vocabulary_of(labels),
        feature_names=names,
        datasets=df["dataset"].to_numpy().astype(str),
        fs=pd.to_numeric(df["fs"], errors="coerce").to_numpy(dtype=np.float64),
    )
