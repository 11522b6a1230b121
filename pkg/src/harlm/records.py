"""Canonical sample records and the canonical CSV format.

A record stream is held as a :class:`pandas.DataFrame` with the canonical
columns (``CANONICAL_COLUMNS``); absent channels are NaN.  :class:`SampleRecord`
is the per-row view for callers that want one reading at a time.
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import pandas as pd


class DatasetId(str, enum.Enum):
    HHAR = "HHAR"
    MOTIONSENSE = "MOTIONSENSE"
    SHOAIB = "SHOAIB"
    UCIHAR = "UCIHAR"
    WISDM = "WISDM"

    @classmethod
    def parse(cls, value: "str | DatasetId") -> "DatasetId":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("_", "").replace("-", "").replace(" ", "")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown dataset id {value!r}; expected one of "
                             f"{[d.value for d in cls]}") from None


class Sensor(str, enum.Enum):
    ACCEL = "a"
    GYRO = "g"
    MAG = "m"


class Axis(str, enum.Enum):
    X = "x"
    Y = "y"
    Z = "z"


@dataclass(frozen=True, order=True)
class ChannelId:
    sensor: Sensor
    axis: Axis

    @property
    def name(self) -> str:
        return self.sensor.value + self.axis.value

    @classmethod
    def parse(cls, name: str) -> "ChannelId":
        name = name.strip().lower()
        if len(name) != 2:
            raise ValueError(f"bad channel name {name!r}")
        return cls(Sensor(name[0]), Axis(name[1]))

    def __str__(self) -> str:
        return self.name


ALL_CHANNELS: tuple[ChannelId, ...] = tuple(ChannelId(s, a) for s in Sensor for a in Axis)
CHANNEL_NAMES: tuple[str, ...] = tuple(c.name for c in ALL_CHANNELS)
META_COLUMNS = ("timestamp", "subject", "activity", "dataset", "device", "position")
CANONICAL_COLUMNS = META_COLUMNS + CHANNEL_NAMES
ACCEL = tuple(c for c in ALL_CHANNELS if c.sensor is Sensor.ACCEL)
GYRO = tuple(c for c in ALL_CHANNELS if c.sensor is Sensor.GYRO)
MAG = tuple(c for c in ALL_CHANNELS if c.sensor is Sensor.MAG)


def ordered_channels(channels: Iterable[ChannelId]) -> tuple[ChannelId, ...]:
    present = set(channels)
    return tuple(c for c in ALL_CHANNELS if c in present)


@dataclass(frozen=True)
class SampleRecord:
    timestamp: float
    channels: Mapping[ChannelId, float]
    subject_id: str
    activity: str
    dataset_id: DatasetId
    device: str | None = None
    position: str | None = None

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        for ch, v in self.channels.items():
            if not math.isfinite(v):
                raise ValueError(f"channel {ch} is not finite: {v}")


@dataclass
class DatasetDescriptor:
    dataset_id: DatasetId
    sampling_rate_hz: float
    channel_set: frozenset[ChannelId]
    label_vocabulary: list[str]
    subject_ids: list[str]
    units: dict[str, str] = field(default_factory=dict)
    dropped_labels: dict[str, int] = field(default_factory=dict)
    malformed_rows: int = 0

    def __post_init__(self):
        if not self.sampling_rate_hz > 0:
            raise ValueError("sampling_rate_hz must be positive")
        if not self.label_vocabulary:
            raise ValueError("label_vocabulary is empty")
        if len(set(self.label_vocabulary)) != len(self.label_vocabulary):
            raise ValueError("label_vocabulary has duplicates")

    @property
    def channel_order(self) -> tuple[ChannelId, ...]:
        return ordered_channels(self.channel_set)


def empty_frame() -> pd.DataFrame:
    return normalize_frame(pd.DataFrame({c: [] for c in CANONICAL_COLUMNS}))


def normalize_frame(df: pd.DataFrame) -> pd.DataFrame:
    """Coerce a frame to canonical column order and dtypes."""
    out = pd.DataFrame(index=pd.RangeIndex(len(df)))
    for col in META_COLUMNS[1:]:
        if col in df:
            s = df[col].reset_index(drop=True)
            out[col] = s.where(s.notna(), "").astype(str)
        else:
            out[col] = ""
    out.insert(0, "timestamp", np.asarray(df["timestamp"], dtype=np.float64))
    for col in CHANNEL_NAMES:
        if col in df:
            out[col] = np.asarray(df[col], dtype=np.float64)
        else:
            out[col] = np.nan
    return out[list(CANONICAL_COLUMNS)]


def present_channels(df: pd.DataFrame) -> tuple[ChannelId, ...]:
    """Channels with at least one non-NaN value."""
    return tuple(c for c in ALL_CHANNELS if df[c.name].notna().any())


def iter_records(df: pd.DataFrame) -> Iterator[SampleRecord]:
    chans = present_channels(df)
    cols = [c.name for c in chans]
    values = df[cols].to_numpy()
    for i, row in enumerate(df.itertuples(index=False)):
        yield SampleRecord(
            timestamp=float(row.timestamp),
            channels={c: float(v) for c, v in zip(chans, values[i]) if not math.isnan(v)},
            subject_id=row.subject,
            activity=row.activity,
            dataset_id=DatasetId.parse(row.dataset),
            device=row.device or None,
            position=row.position or None,
        )


def records_to_frame(records: Iterable[SampleRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        row = {
            "timestamp": r.timestamp,
            "subject": r.subject_id,
            "activity": r.activity,
            "dataset": DatasetId.parse(r.dataset_id).value,
            "device": r.device or "",
            "position": r.position or "",
        }
        row.update({c.name: v for c, v in r.channels.items()})
        rows.append(row)
    if not rows:
        return empty_frame()
    return normalize_frame(pd.DataFrame(rows))


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return ""
    return format(float(v), ".9g")


def to_csv_text(df: pd.DataFrame) -> str:
    """Canonical CSV: fixed header, 9 significant digits, empty cells for absent channels."""
    df = normalize_frame(df)
    buf = io.StringIO()
    buf.write(",".join(CANONICAL_COLUMNS) + "\n")
    ts = df["timestamp"].to_numpy()
    meta = df[list(META_COLUMNS[1:])].to_numpy()
    chans = df[list(CHANNEL_NAMES)].to_numpy()
    for i in range(len(df)):
        cells = [_fmt(ts[i])]
        cells.extend(_quote(m) for m in meta[i])
        cells.extend(_fmt(v) for v in chans[i])
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def _quote(s: str) -> str:
    if any(ch in s for ch in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def write_canonical_csv(df: pd.DataFrame, path: str | Path) -> None:
    from harlm.io import atomic_write_text

    atomic_write_text(path, to_csv_text(df))


def read_canonical_csv(path: str | Path) -> pd.DataFrame:
    df = pd.read_csv(
        path,
        dtype={c: str for c in META_COLUMNS[1:]},
        keep_default_na=False,
        na_values={c: [""] for c in ("timestamp",) + CHANNEL_NAMES},
        encoding="utf-8",
    )
    missing = [c for c in CANONICAL_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: not a canonical record CSV, missing columns {missing}")
    return normalize_frame(df)
