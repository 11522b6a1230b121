"""Activity label harmonisation.

Canonical labels are lower_snake_case English.  Each dataset ships a default
raw -> canonical map; a JSON file can override it.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from pathlib import Path
from typing import Mapping

import pandas as pd

from harlm.records import DatasetId

log = logging.getLogger(__name__)

# superset vocabulary, in a fixed order used wherever labels must be sorted
CANONICAL_LABELS = (
    "walking",
    "running",
    "sitting",
    "standing",
    "walking_upstairs",
    "walking_downstairs",
    "stairs",
    "biking",
    "laying",
    "typing",
    "brushing_teeth",
    "eating_soup",
    "eating_chips",
    "eating_pasta",
    "drinking",
    "eating_sandwich",
    "kicking",
    "catching",
    "dribbling",
    "writing",
    "clapping",
    "folding_clothes",
)

DEFAULT_LABEL_MAPS: dict[DatasetId, dict[str, str]] = {
    DatasetId.SHOAIB: {
        "walking": "walking",
        "running": "running",
        "jogging": "running",
        "sitting": "sitting",
        "standing": "standing",
        "biking": "biking",
        "upstairs": "walking_upstairs",
        "downstairs": "walking_downstairs",
        "walking upstairs": "walking_upstairs",
        "walking downstairs": "walking_downstairs",
    },
    DatasetId.HHAR: {
        "walk": "walking",
        "sit": "sitting",
        "stand": "standing",
        "stairsup": "walking_upstairs",
        "stairsdown": "walking_downstairs",
        "bike": "biking",
    },
    DatasetId.MOTIONSENSE: {
        "wlk": "walking",
        "jog": "running",
        "sit": "sitting",
        "std": "standing",
        "ups": "walking_upstairs",
        "dws": "walking_downstairs",
    },
    DatasetId.UCIHAR: {
        "WALKING": "walking",
        "WALKING_UPSTAIRS": "walking_upstairs",
        "WALKING_DOWNSTAIRS": "walking_downstairs",
        "SITTING": "sitting",
        "STANDING": "standing",
        "LAYING": "laying",
    },
    DatasetId.WISDM: {
        # 2019 smartphone/smartwatch release (activity codes)
        "A": "walking",
        "B": "running",
        "C": "stairs",
        "D": "sitting",
        "E": "standing",
        "F": "typing",
        "G": "brushing_teeth",
        "H": "eating_soup",
        "I": "eating_chips",
        "J": "eating_pasta",
        "K": "drinking",
        "L": "eating_sandwich",
        "M": "kicking",
        "O": "catching",
        "P": "dribbling",
        "Q": "writing",
        "R": "clapping",
        "S": "folding_clothes",
        # v1.1 release (activity names)
        "Walking": "walking",
        "Jogging": "running",
        "Upstairs": "walking_upstairs",
        "Downstairs": "walking_downstairs",
        "Sitting": "sitting",
        "Standing": "standing",
    },
}

# Used when pairing datasets whose vocabularies differ (e.g. WISDM "stairs").
DEFAULT_CROSS_DATASET_MAP: dict[str, str] = {
    "jogging": "running",
    "upstairs": "walking_upstairs",
    "downstairs": "walking_downstairs",
    "lying": "laying",
}


class UnmappedLabelError(ValueError):
    def __init__(self, raw_label: str):
        super().__init__(f"unmapped activity label {raw_label!r}")
        self.raw_label = raw_label


def label_sort_key(label: str) -> tuple[int, str]:
    try:
        return (CANONICAL_LABELS.index(label), label)
    except ValueError:
        return (len(CANONICAL_LABELS), label)


def load_label_map(path: str | Path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in data.items()
    ):
        raise ValueError(f"{path}: label map must be a JSON object of string -> string")
    return data


def harmonize_labels(
    records: pd.DataFrame,
    label_map: Mapping[str, str],
    strict_mode: bool = False,
    dropped: Counter | None = None,
) -> pd.DataFrame:
    """Rewrite ``activity`` through ``label_map``.

    Unmapped labels raise :class:`UnmappedLabelError` in strict mode, and are
    otherwise dropped with a per-label count added to ``dropped``.
    """
    raw = records["activity"].astype(str)
    mapped = raw.map(dict(label_map))
    missing = mapped.isna()
    if missing.any():
        if strict_mode:
            raise UnmappedLabelError(raw[missing].iloc[0])
        counts = raw[missing].value_counts()
        for lab, n in counts.items():
            log.warning("dropping %d records with unmapped label %r", n, lab)
            if dropped is not None:
                dropped[lab] += int(n)
    out = records.loc[~missing].copy()
    out["activity"] = mapped[~missing].astype(str)
    return out.reset_index(drop=True)
