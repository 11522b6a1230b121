"""Fixed-length overlapping window segmentation.

Windows are not copied out of the record stream: a :class:`WindowSet` keeps
the channel matrix once and one start offset per window, and materialises
``(n, W, C)`` batches on demand.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from harlm.records import ChannelId, DatasetId, ordered_channels, present_channels

GAP_FACTOR = 5.0
SESSION_KEYS = ("subject", "activity", "device", "position")


@dataclass(frozen=True)
class Window:
    samples: np.ndarray  # (W, C)
    channel_order: tuple[ChannelId, ...]
    activity: str
    subject_id: str
    dataset_id: DatasetId
    sampling_rate_hz: float
    origin_index: int
    device: str = ""
    position: str = ""

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[1] != len(self.channel_order):
            raise ValueError("samples must be W x C with C == len(channel_order)")
        if not np.isfinite(self.samples).all():
            raise ValueError("window contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return self.samples.shape[0] / self.sampling_rate_hz


@dataclass
class WindowSet:
    """A batch of equal-length windows over one shared sample matrix."""

    data: np.ndarray  # (rows, C)
    starts: np.ndarray  # (n,) row offset into data
    window_len: int
    channel_order: tuple[ChannelId, ...]
    activity: np.ndarray
    subject: np.ndarray
    dataset: np.ndarray
    device: np.ndarray
    position: np.ndarray
    fs: np.ndarray
    origin_index: np.ndarray  # offset within the source session
    skipped_sessions: int = 0
    n_sessions: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.starts.size)

    def batch(self, sl: slice | np.ndarray | None = None) -> np.ndarray:
        """Materialise windows ``sl`` as an (n, W, C) float64 array."""
        starts = self.starts if sl is None else self.starts[sl]
        idx = starts[:, None] + np.arange(self.window_len)[None, :]
        return self.data[idx]

    def window(self, i: int) -> Window:
        s = int(self.starts[i])
        return Window(
            samples=self.data[s : s + self.window_len].copy(),
            channel_order=self.channel_order,
            activity=str(self.activity[i]),
            subject_id=str(self.subject[i]),
            dataset_id=DatasetId.parse(self.dataset[i]),
            sampling_rate_hz=float(self.fs[i]),
            origin_index=int(self.origin_index[i]),
            device=str(self.device[i]),
            position=str(self.position[i]),
        )

    def __iter__(self) -> Iterator[Window]:
        for i in range(len(self)):
            yield self.window(i)

    def subset(self, idx: np.ndarray) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(
            data=self.data,
            starts=self.starts[idx],
            window_len=self.window_len,
            channel_order=self.channel_order,
            activity=self.activity[idx],
            subject=self.subject[idx],
            dataset=self.dataset[idx],
            device=self.device[idx],
            position=self.position[idx],
            fs=self.fs[idx],
            origin_index=self.origin_index[idx],
            meta=dict(self.meta),
        )


def _round_sig(x: float, digits: int = 6) -> float:
    return float(f"{x:.{digits}g}")


def session_bounds(df: pd.DataFrame, channels: Sequence[ChannelId]) -> list[tuple[int, int]]:
    """Half-open row ranges of sessions.

    A session ends at any change of (subject, activity, device, position), at a
    timestamp step backwards or larger than ``GAP_FACTOR`` times the median
    step of its key run, and around rows with non-finite channel values.
    """
    n = len(df)
    if n == 0:
        return []
    key = pd.MultiIndex.from_frame(df[list(SESSION_KEYS)].astype(str))
    codes, _ = pd.factorize(key)
    key_break = np.flatnonzero(np.diff(codes) != 0) + 1
    runs = np.concatenate([[0], key_break, [n]])
    ts = df["timestamp"].to_numpy(dtype=np.float64)
    vals = df[[c.name for c in channels]].to_numpy(dtype=np.float64)
    finite = np.isfinite(vals).all(axis=1) & np.isfinite(ts)
    out = []
    for a, b in zip(runs[:-1], runs[1:]):
        dt = np.diff(ts[a:b])
        pos = dt[dt > 0]
        med = float(np.median(pos)) if pos.size else 0.0
        brk = (dt < 0) | (dt > GAP_FACTOR * med) if med > 0 else (dt < 0)
        cuts = np.concatenate([[a], a + 1 + np.flatnonzero(brk), [b]])
        for s, e in zip(cuts[:-1], cuts[1:]):
            good = finite[s:e]
            if good.all():
                out.append((int(s), int(e)))
                continue
            # split around bad rows
            idx = np.flatnonzero(good)
            if idx.size == 0:
                continue
            splits = np.flatnonzero(np.diff(idx) != 1) + 1
            for part in np.split(idx, splits):
                out.append((int(s + part[0]), int(s + part[-1] + 1)))
    return out


def segment(
    records: pd.DataFrame,
    window_len: int = 200,
    step: int = 20,
    channels: Sequence[ChannelId] | None = None,
    fs: float | None = None,
) -> WindowSet:
    """Cut each session into windows of ``window_len`` rows every ``step`` rows.

    A session of length L yields ``floor((L - window_len) / step) + 1``
    windows; shorter sessions yield none and are counted in
    ``skipped_sessions``.  Trailing samples are dropped.

    ``fs`` overrides the per-session sampling rate, which otherwise comes
    from the median positive timestamp step.
    """
    if window_len < 2:
        raise ValueError("window_len must be >= 2")
    if not 1 <= step <= window_len:
        raise ValueError("step must satisfy 1 <= step <= window_len")
    chans = ordered_channels(channels) if channels is not None else present_channels(records)
    if not chans:
        raise ValueError("no channels to segment")
    data = np.ascontiguousarray(records[[c.name for c in chans]].to_numpy(dtype=np.float64))
    ts = records["timestamp"].to_numpy(dtype=np.float64)
    bounds = session_bounds(records, chans)

    starts, origins, sess_idx, rates = [], [], [], []
    skipped = 0
    for k, (a, b) in enumerate(bounds):
        length = b - a
        if length < window_len:
            skipped += 1
            continue
        off = np.arange(0, length - window_len + 1, step, dtype=np.int64)
        starts.append(a + off)
        origins.append(off)
        sess_idx.append(np.full(off.size, a, dtype=np.int64))
        if fs is not None:
            rate = float(fs)
        else:
            dt = np.diff(ts[a:b])
            dt = dt[dt > 0]
            if not dt.size:
                raise ValueError(f"cannot infer sampling rate for session at row {a}; pass fs")
            rate = _round_sig(1.0 / float(np.median(dt)))
        rates.append(np.full(off.size, rate))

    def cat(xs, dtype):
        return np.concatenate(xs).astype(dtype) if xs else np.zeros(0, dtype=dtype)

    starts_a = cat(starts, np.int64)
    first_row = cat(sess_idx, np.int64)

    def meta(col):
        return records[col].to_numpy(dtype=object)[first_row].astype(str)

    return WindowSet(
        data=data,
        starts=starts_a,
        window_len=int(window_len),
        channel_order=chans,
        activity=meta("activity"),
        subject=meta("subject"),
        dataset=meta("dataset"),
        device=meta("device"),
        position=meta("position"),
        fs=cat(rates, np.float64),
        origin_index=cat(origins, np.int64),
        skipped_sessions=skipped,
        n_sessions=len(bounds),
        meta={"window_len": int(window_len), "step": int(step)},
    )


def from_windows(windows: Sequence[Window]) -> WindowSet:
    """Pack standalone windows into a WindowSet (data rows are concatenated)."""
    if not windows:
        raise ValueError("no windows")
    w = windows[0].samples.shape[0]
    order = windows[0].channel_order
    for win in windows:
        if win.samples.shape[0] != w or win.channel_order != order:
            raise ValueError("windows differ in length or channel order")
    data = np.concatenate([win.samples for win in windows])
    return WindowSet(
        data=data,
        starts=np.arange(len(windows), dtype=np.int64) * w,
        window_len=w,
        channel_order=order,
        activity=np.array([x.activity for x in windows]),
        subject=np.array([x.subject_id for x in windows]),
        dataset=np.array([DatasetId.parse(x.dataset_id).value for x in windows]),
        device=np.array([x.device for x in windows]),
        position=np.array([x.position for x in windows]),
        fs=np.array([x.sampling_rate_hz for x in windows], dtype=np.float64),
        origin_index=np.array([x.origin_index for x in windows], dtype=np.int64),
    )


# --------------------------------------------------------------------------
# windows files: JSONL (one window per line) or .npz (shared matrix + offsets)
# --------------------------------------------------------------------------


def _window_meta(ws: WindowSet, i: int) -> dict:
    return {
        "activity": str(ws.activity[i]),
        "subject": str(ws.subject[i]),
        "dataset": str(ws.dataset[i]),
        "device": str(ws.device[i]),
        "position": str(ws.position[i]),
        "fs": float(ws.fs[i]),
        "origin_index": int(ws.origin_index[i]),
        "channels": [c.name for c in ws.channel_order],
    }


def write_windows(ws: WindowSet, path: str | Path) -> None:
    from harlm.io import atomic_path

    path = Path(path)
    with atomic_path(path) as tmp:
        if path.suffix == ".npz":
            with open(tmp, "wb") as fh:
                np.savez_compressed(
                    fh,
                    data=ws.data,
                    starts=ws.starts,
                    window_len=np.int64(ws.window_len),
                    channels=np.array([c.name for c in ws.channel_order]),
                    activity=ws.activity.astype(str),
                    subject=ws.subject.astype(str),
                    dataset=ws.dataset.astype(str),
                    device=ws.device.astype(str),
                    position=ws.position.astype(str),
                    fs=ws.fs,
                    origin_index=ws.origin_index,
                    info=np.array(json.dumps(ws.meta, sort_keys=True)),
                )
        else:
            with open(tmp, "w", encoding="utf-8", newline="") as fh:
                for i in range(len(ws)):
                    s = int(ws.starts[i])
                    rows = ws.data[s : s + ws.window_len].tolist()
                    fh.write(json.dumps({"meta": _window_meta(ws, i), "rows": rows}) + "\n")


def read_windows(path: str | Path) -> WindowSet:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as z:
            return WindowSet(
                data=z["data"],
                starts=z["starts"],
                window_len=int(z["window_len"]),
                channel_order=tuple(ChannelId.parse(c) for c in z["channels"]),
                activity=z["activity"],
                subject=z["subject"],
                dataset=z["dataset"],
                device=z["device"],
                position=z["position"],
                fs=z["fs"],
                origin_index=z["origin_index"],
                meta=json.loads(str(z["info"])),
            )
    windows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            m = obj["meta"]
            windows.append(
                Window(
                    samples=np.asarray(obj["rows"], dtype=np.float64),
                    channel_order=tuple(ChannelId.parse(c) for c in m["channels"]),
                    activity=m["activity"],
                    subject_id=m["subject"],
                    dataset_id=DatasetId.parse(m["dataset"]),
                    sampling_rate_hz=float(m["fs"]),
                    origin_index=int(m["origin_index"]),
                    device=m.get("device", ""),
                    position=m.get("position", ""),
                )
            )
    return from_windows(windows)
