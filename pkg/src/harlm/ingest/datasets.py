"""Parsers for the five public IMU distributions.

Each parser reads the official directory layout under ``root`` and returns a
canonical record frame (raw activity labels) plus a count of malformed rows.
:func:`parse_dataset` then harmonises labels, orders sessions and builds the
:class:`DatasetDescriptor`.

Expected layouts (``root`` may also point at the inner directory):

* SHOAIB       ``DataCollected/Participant_<n>.csv``
* HHAR         ``Activity recognition exp/{Phones,Watch}_{accelerometer,gyroscope}.csv``
* MOTIONSENSE  ``A_DeviceMotion_data/<act>_<trial>/sub_<n>.csv``
* UCIHAR       ``UCI HAR Dataset/{train,test}/Inertial Signals/*.txt``
* WISDM        ``wisdm-dataset/raw/<device>/accel/data_<id>_accel_<device>.txt``
               or the older ``WISDM_ar_v1.1_raw.txt``
"""
from __future__ import annotations

import csv
import logging
import math
import re
from collections import Counter
from pathlib import Path

import numpy as np
import pandas as pd

from harlm.ingest.labels import DEFAULT_LABEL_MAPS, harmonize_labels, label_sort_key
from harlm.records import (
    ACCEL,
    ALL_CHANNELS,
    GYRO,
    DatasetDescriptor,
    DatasetId,
    empty_frame,
    normalize_frame,
    present_channels,
)

log = logging.getLogger(__name__)

NOMINAL_RATE_HZ = {
    DatasetId.SHOAIB: 50.0,
    DatasetId.MOTIONSENSE: 50.0,
    DatasetId.UCIHAR: 50.0,
    DatasetId.WISDM: 20.0,
}
UNITS = {
    DatasetId.SHOAIB: {"accel": "m/s^2", "gyro": "rad/s", "mag": "uT"},
    DatasetId.HHAR: {"accel": "m/s^2", "gyro": "rad/s"},
    DatasetId.MOTIONSENSE: {"accel": "g (user acceleration)", "gyro": "rad/s"},
    DatasetId.UCIHAR: {"accel": "g (total acceleration)", "gyro": "rad/s"},
    DatasetId.WISDM: {"accel": "m/s^2"},
}
MAX_MALFORMED_FRACTION = 0.01
SESSION_GAP_S = 10.0  # gap inserted between synthesised recordings


class DatasetLayoutError(FileNotFoundError):
    """A file the official layout requires is missing."""

    def __init__(self, dataset: DatasetId, relpath: str):
        super().__init__(f"{dataset.value}: expected file or directory {relpath!r} not found")
        self.relpath = relpath


class MalformedDataError(ValueError):
    pass


def _find_dir(root: Path, name: str) -> Path | None:
    if root.name == name:
        return root
    cand = root / name
    if cand.exists():
        return cand
    return None


def _check_malformed(dataset: DatasetId, bad: int, total: int) -> None:
    if bad:
        log.warning("%s: skipped %d malformed rows of %d", dataset.value, bad, total)
    if total and bad / total > MAX_MALFORMED_FRACTION:
        raise MalformedDataError(
            f"{dataset.value}: {bad} of {total} rows malformed "
            f"(> {MAX_MALFORMED_FRACTION:.0%} threshold)"
        )


# --------------------------------------------------------------------------
# Shoaib
# --------------------------------------------------------------------------

SHOAIB_POSITIONS = {
    "arm": "upper_arm",
    "upper_arm": "upper_arm",
    "wrist": "wrist",
    "belt": "belt",
    "waist": "belt",
    "left_pocket": "left_pocket",
    "right_pocket": "right_pocket",
    "pocket": "right_pocket",
}
_SHOAIB_COLS = {
    "ax": "ax", "ay": "ay", "az": "az",
    "gx": "gx", "gy": "gy", "gz": "gz",
    "mx": "mx", "my": "my", "mz": "mz",
}


def _norm_header(s: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", s.strip().lower()).strip("_")


def parse_shoaib(root: Path, position: str | None = None) -> tuple[pd.DataFrame, int, int]:
    pos = SHOAIB_POSITIONS.get(_norm_header(position or "arm"))
    if pos is None:
        raise ValueError(f"unknown Shoaib position {position!r}; choose from {sorted(SHOAIB_POSITIONS)}")
    data_dir = _find_dir(root, "DataCollected") or root
    files = sorted(data_dir.glob("Participant_*.csv"), key=_natural_key)
    if not files:
        raise DatasetLayoutError(DatasetId.SHOAIB, "DataCollected/Participant_1.csv")
    frames, bad, total = [], 0, 0
    fs = NOMINAL_RATE_HZ[DatasetId.SHOAIB]
    for path in files:
        subject = path.stem.split("_", 1)[1]
        with open(path, newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise MalformedDataError(f"{path}: missing the two header rows")
        top, names = rows[0], [_norm_header(c) for c in rows[1]]
        block_starts = [(i, _norm_header(c)) for i, c in enumerate(top) if c.strip()]
        span = None
        for k, (start, name) in enumerate(block_starts):
            if name == pos:
                end = block_starts[k + 1][0] if k + 1 < len(block_starts) else len(names)
                span = (start, end)
        if span is None:
            raise MalformedDataError(f"{path}: no {pos!r} column block in header")
        cols = {}
        for i in range(*span):
            if names[i] in _SHOAIB_COLS and names[i] not in cols:
                cols[names[i]] = i
        missing = [c for c in _SHOAIB_COLS if c not in cols]
        if missing:
            raise MalformedDataError(f"{path}: {pos} block lacks columns {missing}")
        label_idx = [i for i in range(*span) if "activity" in names[i]]
        if not label_idx:
            label_idx = [i for i, n in enumerate(names) if "activity" in n]
        if not label_idx:
            raise MalformedDataError(f"{path}: no activity label column")
        li = label_idx[-1]
        body = rows[2:]
        total += len(body)
        vals = np.full((len(body), 9), np.nan)
        labels = []
        keep = np.zeros(len(body), dtype=bool)
        order = [cols[c.name] for c in ALL_CHANNELS]
        for r, row in enumerate(body):
            try:
                v = [float(row[i]) for i in order]
                lab = row[li].strip()
            except (ValueError, IndexError):
                bad += 1
                labels.append("")
                continue
            if not lab or not all(math.isfinite(x) for x in v):
                bad += 1
                labels.append("")
                continue
            vals[r] = v
            labels.append(lab)
            keep[r] = True
        # the shipped clock column has undocumented units: synthesise index/fs
        ts = np.arange(len(body)) / fs
        df = pd.DataFrame(vals[keep], columns=[c.name for c in ALL_CHANNELS])
        df.insert(0, "timestamp", ts[keep])
        df["subject"] = subject
        df["activity"] = np.asarray(labels, dtype=object)[keep]
        df["dataset"] = DatasetId.SHOAIB.value
        df["device"] = "galaxy_s2"
        df["position"] = pos
        frames.append(df)
    return pd.concat(frames, ignore_index=True), bad, total


# --------------------------------------------------------------------------
# HHAR
# --------------------------------------------------------------------------

_HHAR_REQUIRED = ("Creation_Time", "x", "y", "z", "User", "Device", "gt")


def _read_hhar(path: Path) -> tuple[pd.DataFrame, int]:
    df = pd.read_csv(path, dtype={"User": str, "Device": str, "gt": str, "Model": str},
                     keep_default_na=False, na_values={"x": [""], "y": [""], "z": [""]})
    missing = [c for c in _HHAR_REQUIRED if c not in df.columns]
    if missing:
        raise MalformedDataError(f"{path}: missing columns {missing}")
    n = len(df)
    for c in ("Creation_Time", "x", "y", "z"):
        df[c] = pd.to_numeric(df[c], errors="coerce")
    ok = np.isfinite(df[["Creation_Time", "x", "y", "z"]].to_numpy(dtype=float)).all(axis=1)
    return df.loc[ok].reset_index(drop=True), int(n - ok.sum())


def parse_hhar(root: Path, device: str | None = None) -> tuple[pd.DataFrame, int, int]:
    kind = (device or "phone").strip().lower()
    prefix = {"phone": "Phones", "phones": "Phones", "watch": "Watch"}.get(kind)
    if prefix is None:
        raise ValueError(f"HHAR device must be 'phone' or 'watch', got {device!r}")
    base = _find_dir(root, "Activity recognition exp") or root
    acc_path = base / f"{prefix}_accelerometer.csv"
    if not acc_path.exists():
        raise DatasetLayoutError(DatasetId.HHAR, f"Activity recognition exp/{prefix}_accelerometer.csv")
    acc, bad = _read_hhar(acc_path)
    total = len(acc) + bad
    gyr_path = base / f"{prefix}_gyroscope.csv"
    out = []
    gyr = None
    if gyr_path.exists():
        gyr, gbad = _read_hhar(gyr_path)
        bad += gbad
        total += len(gyr) + gbad
    acc["t"] = acc["Creation_Time"].astype(np.float64) / 1e9
    for (user, dev), g in acc.groupby(["User", "Device"], sort=True):
        g = g.sort_values("t", kind="stable")
        frame = pd.DataFrame({
            "timestamp": g["t"].to_numpy(),
            "ax": g["x"].to_numpy(float), "ay": g["y"].to_numpy(float), "az": g["z"].to_numpy(float),
            "activity": g["gt"].to_numpy(),
        })
        if gyr is not None:
            gg = gyr[(gyr["User"] == user) & (gyr["Device"] == dev)]
            if gg.empty:
                continue
            gg = pd.DataFrame({
                "timestamp": gg["Creation_Time"].to_numpy(np.float64) / 1e9,
                "gx": gg["x"].to_numpy(float), "gy": gg["y"].to_numpy(float), "gz": gg["z"].to_numpy(float),
            }).sort_values("timestamp", kind="stable")
            dt = np.diff(frame["timestamp"].to_numpy())
            tol = 2.0 * float(np.median(dt[dt > 0])) if (dt > 0).any() else 0.05
            frame = pd.merge_asof(frame, gg, on="timestamp", direction="nearest", tolerance=tol)
            frame = frame.dropna(subset=["gx", "gy", "gz"])
        frame["subject"] = user
        frame["dataset"] = DatasetId.HHAR.value
        frame["device"] = dev
        frame["position"] = "waist" if prefix == "Phones" else "arm"
        out.append(frame)
    if not out:
        return empty_frame(), bad, total
    return pd.concat(out, ignore_index=True), bad, total


# --------------------------------------------------------------------------
# MotionSense
# --------------------------------------------------------------------------

_MS_COLS = {
    "ax": "userAcceleration.x", "ay": "userAcceleration.y", "az": "userAcceleration.z",
    "gx": "rotationRate.x", "gy": "rotationRate.y", "gz": "rotationRate.z",
}


def parse_motionsense(root: Path) -> tuple[pd.DataFrame, int, int]:
    base = _find_dir(root, "A_DeviceMotion_data")
    if base is None:
        raise DatasetLayoutError(DatasetId.MOTIONSENSE, "A_DeviceMotion_data/")
    fs = NOMINAL_RATE_HZ[DatasetId.MOTIONSENSE]
    trials = sorted((p for p in base.iterdir() if p.is_dir() and "_" in p.name), key=_natural_key)
    if not trials:
        raise DatasetLayoutError(DatasetId.MOTIONSENSE, "A_DeviceMotion_data/<act>_<trial>/sub_<n>.csv")
    clock: dict[tuple[str, str], float] = {}
    frames, bad, total = [], 0, 0
    for trial in trials:
        code = trial.name.split("_", 1)[0]
        for path in sorted(trial.glob("sub_*.csv"), key=_natural_key):
            subject = path.stem.split("_", 1)[1]
            raw = pd.read_csv(path)
            missing = [c for c in _MS_COLS.values() if c not in raw.columns]
            if missing:
                raise MalformedDataError(f"{path}: missing columns {missing}")
            vals = raw[list(_MS_COLS.values())].apply(pd.to_numeric, errors="coerce").to_numpy(float)
            ok = np.isfinite(vals).all(axis=1)
            total += len(vals)
            bad += int((~ok).sum())
            key = (subject, code)
            # continuous per-(subject, activity) clock, trials separated by a gap
            start = clock.get(key, -SESSION_GAP_S) + SESSION_GAP_S
            ts = start + np.arange(len(vals)) / fs
            clock[key] = float(ts[-1]) if len(ts) else start
            df = pd.DataFrame(vals[ok], columns=list(_MS_COLS))
            df.insert(0, "timestamp", ts[ok])
            df["subject"] = subject
            df["activity"] = code
            df["dataset"] = DatasetId.MOTIONSENSE.value
            df["device"] = "iphone6s"
            df["position"] = "front_pocket"
            frames.append(df)
    if not frames:
        raise DatasetLayoutError(DatasetId.MOTIONSENSE, "A_DeviceMotion_data/<act>_<trial>/sub_<n>.csv")
    return pd.concat(frames, ignore_index=True), bad, total


# --------------------------------------------------------------------------
# UCI HAR
# --------------------------------------------------------------------------

_UCI_SIGNALS = {
    "ax": "total_acc_x", "ay": "total_acc_y", "az": "total_acc_z",
    "gx": "body_gyro_x", "gy": "body_gyro_y", "gz": "body_gyro_z",
}
UCI_WINDOW = 128
UCI_HOP = 64


def _uci_labels(base: Path) -> dict[int, str]:
    path = base / "activity_labels.txt"
    if not path.exists():
        raise DatasetLayoutError(DatasetId.UCIHAR, "UCI HAR Dataset/activity_labels.txt")
    out = {}
    for line in path.read_text().splitlines():
        parts = line.split()
        if len(parts) == 2:
            out[int(parts[0])] = parts[1]
    return out


def flatten_overlapping(windows: np.ndarray, hop: int) -> list[np.ndarray]:
    """Undo a 50%-overlap segmentation.

    ``windows`` is (n, w, c).  Consecutive windows whose shared ``w - hop``
    samples agree are chained into one stream; a mismatch starts a new one.
    """
    n, w, _ = windows.shape
    runs, cur = [], [windows[0]]
    for i in range(1, n):
        if np.allclose(windows[i - 1][hop:], windows[i][: w - hop], rtol=0, atol=1e-7):
            cur.append(windows[i][w - hop:])
        else:
            runs.append(np.concatenate(cur))
            cur = [windows[i]]
    runs.append(np.concatenate(cur))
    return runs


def parse_ucihar(root: Path) -> tuple[pd.DataFrame, int, int]:
    base = _find_dir(root, "UCI HAR Dataset") or root
    labels = _uci_labels(base)
    fs = NOMINAL_RATE_HZ[DatasetId.UCIHAR]
    frames = []
    clock: dict[tuple[str, str], float] = {}
    for split in ("train", "test"):
        sig_dir = base / split / "Inertial Signals"
        subj_path = base / split / f"subject_{split}.txt"
        y_path = base / split / f"y_{split}.txt"
        for p, rel in ((subj_path, f"{split}/subject_{split}.txt"), (y_path, f"{split}/y_{split}.txt")):
            if not p.exists():
                raise DatasetLayoutError(DatasetId.UCIHAR, f"UCI HAR Dataset/{rel}")
        subjects = np.loadtxt(subj_path, dtype=int, ndmin=1)
        ys = np.loadtxt(y_path, dtype=int, ndmin=1)
        sigs = []
        for name in _UCI_SIGNALS.values():
            p = sig_dir / f"{name}_{split}.txt"
            if not p.exists():
                raise DatasetLayoutError(DatasetId.UCIHAR, f"UCI HAR Dataset/{split}/Inertial Signals/{p.name}")
            sigs.append(np.loadtxt(p, ndmin=2))
        win = np.stack(sigs, axis=-1)  # (n, 128, 6)
        if not (len(win) == len(subjects) == len(ys)):
            raise MalformedDataError(f"UCIHAR {split}: row counts of signals/subjects/labels differ")
        # maximal runs of identical (subject, label)
        change = np.flatnonzero((np.diff(subjects) != 0) | (np.diff(ys) != 0)) + 1
        bounds = np.concatenate([[0], change, [len(ys)]])
        for a, b in zip(bounds[:-1], bounds[1:]):
            subject = str(subjects[a])
            act = labels.get(int(ys[a]), str(ys[a]))
            for stream in flatten_overlapping(win[a:b], UCI_HOP):
                key = (subject, act)
                start = clock.get(key, -SESSION_GAP_S) + SESSION_GAP_S
                ts = start + np.arange(len(stream)) / fs
                clock[key] = float(ts[-1])
                df = pd.DataFrame(stream, columns=list(_UCI_SIGNALS))
                df.insert(0, "timestamp", ts)
                df["subject"] = subject
                df["activity"] = act
                frames.append(df)
    out = pd.concat(frames, ignore_index=True)
    out["dataset"] = DatasetId.UCIHAR.value
    out["device"] = "galaxy_s2"
    out["position"] = "waist"
    return out, 0, len(out)


# --------------------------------------------------------------------------
# WISDM
# --------------------------------------------------------------------------


def _parse_wisdm_lines(text: str) -> tuple[list[tuple], int]:
    rows, bad = [], 0
    for rec in re.split(r"[;\n]", text):
        rec = rec.strip().strip(",")
        if not rec:
            continue
        parts = [p.strip() for p in rec.split(",")]
        if len(parts) != 6:
            bad += 1
            continue
        try:
            t, x, y, z = float(parts[2]), float(parts[3]), float(parts[4]), float(parts[5])
        except ValueError:
            bad += 1
            continue
        if not (math.isfinite(t) and math.isfinite(x) and math.isfinite(y) and math.isfinite(z)) or not parts[1]:
            bad += 1
            continue
        rows.append((parts[0], parts[1], t, x, y, z))
    return rows, bad


def parse_wisdm(root: Path, device: str | None = None) -> tuple[pd.DataFrame, int, int]:
    dev = (device or "phone").strip().lower()
    legacy = root / "WISDM_ar_v1.1_raw.txt"
    if legacy.exists():
        files = [legacy]
        dev_name = "phone"
    else:
        base = _find_dir(root, "wisdm-dataset") or root
        acc_dir = base / "raw" / dev / "accel"
        if not acc_dir.exists():
            raise DatasetLayoutError(DatasetId.WISDM, f"wisdm-dataset/raw/{dev}/accel/")
        files = sorted(acc_dir.glob(f"data_*_accel_{dev}.txt"), key=_natural_key)
        if not files:
            raise DatasetLayoutError(DatasetId.WISDM, f"wisdm-dataset/raw/{dev}/accel/data_<id>_accel_{dev}.txt")
        dev_name = dev
    rows, bad = [], 0
    for path in files:
        r, b = _parse_wisdm_lines(path.read_text(encoding="utf-8", errors="replace"))
        rows.extend(r)
        bad += b
    total = len(rows) + bad
    df = pd.DataFrame(rows, columns=["subject", "activity", "t", "ax", "ay", "az"])
    df.insert(0, "timestamp", df.pop("t") / 1e9)
    df["dataset"] = DatasetId.WISDM.value
    df["device"] = dev_name
    df["position"] = "trouser_pocket" if dev_name == "phone" else "wrist"
    return df, bad, total


# --------------------------------------------------------------------------


def _natural_key(p: Path):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", p.name)]


def order_sessions(df: pd.DataFrame) -> pd.DataFrame:
    """Group rows by (subject, activity, device, position) in order of first
    appearance; rows inside a group are stably sorted by timestamp."""
    if df.empty:
        return df.reset_index(drop=True)
    key = pd.MultiIndex.from_frame(df[["subject", "activity", "device", "position"]])
    codes, _ = pd.factorize(key)
    order = np.lexsort((df["timestamp"].to_numpy(), codes))
    return df.iloc[order].reset_index(drop=True)


def session_rates(df: pd.DataFrame) -> list[float]:
    rates = []
    for _, g in df.groupby(["subject", "activity", "device", "position"], sort=False):
        dt = np.diff(g["timestamp"].to_numpy())
        dt = dt[dt > 0]
        if dt.size:
            rates.append(1.0 / float(np.median(dt)))
    return rates


def parse_dataset(
    root: str | Path,
    dataset_id: str | DatasetId,
    label_map: dict[str, str] | None = None,
    strict_mode: bool = False,
    position: str | None = None,
    device: str | None = None,
) -> tuple[pd.DataFrame, DatasetDescriptor]:
    """Parse one dataset distribution into canonical records plus a descriptor.

    Parameters
    ----------
    root : path
        Directory holding the official layout.
    dataset_id : str or DatasetId
    label_map : dict, optional
        Raw -> canonical label map; defaults to the dataset's built-in map.
    strict_mode : bool
        Raise on unmapped labels instead of dropping them.
    position : str, optional
        Shoaib body position (default ``arm``).
    device : str, optional
        HHAR / WISDM device family, ``phone`` (default) or ``watch``.
    """
    ds = DatasetId.parse(dataset_id)
    root = Path(root)
    if not root.exists():
        raise DatasetLayoutError(ds, str(root))
    if ds is DatasetId.SHOAIB:
        df, bad, total = parse_shoaib(root, position)
    elif ds is DatasetId.HHAR:
        df, bad, total = parse_hhar(root, device)
    elif ds is DatasetId.MOTIONSENSE:
        df, bad, total = parse_motionsense(root)
    elif ds is DatasetId.UCIHAR:
        df, bad, total = parse_ucihar(root)
    else:
        df, bad, total = parse_wisdm(root, device)
    _check_malformed(ds, bad, total)

    lmap = DEFAULT_LABEL_MAPS[ds] if label_map is None else label_map
    dropped: Counter = Counter()
    df = harmonize_labels(normalize_frame(df), lmap, strict_mode=strict_mode, dropped=dropped)
    df = order_sessions(df)

    chans = present_channels(df) if len(df) else (ACCEL + GYRO)
    labels = sorted(set(df["activity"]), key=label_sort_key)
    if not labels:
        raise MalformedDataError(f"{ds.value}: no records left after label harmonisation")
    if ds is DatasetId.HHAR:
        rates = session_rates(df)
        fs = float(np.median(rates)) if rates else 50.0
    else:
        fs = NOMINAL_RATE_HZ[ds]
    desc = DatasetDescriptor(
        dataset_id=ds,
        sampling_rate_hz=fs,
        channel_set=frozenset(chans),
        label_vocabulary=labels,
        subject_ids=sorted(set(df["subject"]), key=_subject_key),
        units=dict(UNITS[ds]),
        dropped_labels=dict(dropped),
        malformed_rows=bad,
    )
    return df, desc


def _subject_key(s: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


def descriptor_from_frame(df: pd.DataFrame, dataset_id: str | DatasetId | None = None) -> DatasetDescriptor:
    """Descriptor for an already-canonical frame (e.g. read back from CSV)."""
    ds = DatasetId.parse(dataset_id or df["dataset"].iloc[0])
    rates = session_rates(df)
    return DatasetDescriptor(
        dataset_id=ds,
        sampling_rate_hz=float(np.median(rates)) if rates else NOMINAL_RATE_HZ.get(ds, 50.0),
        channel_set=frozenset(present_channels(df)),
        label_vocabulary=sorted(set(df["activity"]), key=label_sort_key),
        subject_ids=sorted(set(df["subject"]), key=_subject_key),
    )
