"""Deterministic synthetic IMU data.

Used for the bundled fixture, for tests, and for exercising the parsers
without the real downloads.  Every generator takes an explicit seed.
"""
from __future__ import annotations

import csv
import io
import shutil
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from harlm.records import ALL_CHANNELS, CHANNEL_NAMES, ChannelId, DatasetId, ordered_channels
from harlm.windowing import Window, WindowSet, from_windows

FIXTURE_NAME = "fixture_1000"
FIXTURE_SUBJECTS = ("1", "2")
FIXTURE_ACTIVITIES = ("walking", "jogging", "sitting", "standing")
FIXTURE_ROWS_PER_SESSION = 125
FIXTURE_SEED = 20240611

# per activity: accel mean, oscillation (Hz, accel amp, gyro amp), noise std
PROFILES = {
    "walking": ((0.5, 9.4, 1.2), (1.8, 2.4, 0.9), 0.30),
    "running": ((0.8, 9.2, 1.8), (2.8, 6.0, 2.2), 0.50),
    "sitting": ((0.3, 2.1, 9.5), (0.0, 0.0, 0.0), 0.04),
    "standing": ((0.2, 9.7, 1.0), (0.0, 0.0, 0.0), 0.04),
    "walking_upstairs": ((0.9, 9.3, 2.2), (1.5, 2.0, 1.1), 0.30),
    "walking_downstairs": ((0.6, 9.5, 0.6), (2.1, 3.2, 1.3), 0.35),
    "biking": ((3.5, 7.9, 4.1), (1.2, 1.2, 0.6), 0.25),
    "laying": ((9.6, 0.8, 1.1), (0.0, 0.0, 0.0), 0.03),
}
RAW_ALIASES = {"jogging": "running"}
MAG_FIELD = np.array([22.0, -5.0, -40.0])


def activity_signal(
    activity: str,
    n: int,
    fs: float,
    rng: np.random.Generator,
    subject_gain: float = 1.0,
    phase: float | None = None,
) -> np.ndarray:
    """(n, 9) accel (m/s^2), gyro (rad/s), mag (uT) samples for one activity."""
    mean, (f0, a_amp, g_amp), noise = PROFILES[RAW_ALIASES.get(activity, activity)]
    t = np.arange(n) / fs
    ph = rng.uniform(0, 2 * np.pi) if phase is None else phase
    out = np.empty((n, 9))
    base = np.sin(2 * np.pi * f0 * t + ph) if f0 > 0 else np.zeros(n)
    harm = np.sin(4 * np.pi * f0 * t + 2 * ph) if f0 > 0 else np.zeros(n)
    for k in range(3):
        w = (1.0, 0.6, 0.35)[k]
        out[:, k] = mean[k] + subject_gain * a_amp * w * (base + 0.3 * harm) + rng.normal(0, noise, n)
    for k in range(3):
        w = (0.5, 1.0, 0.7)[k]
        g = subject_gain * g_amp * w * np.cos(2 * np.pi * f0 * t + ph + k) if f0 > 0 else 0.0
        out[:, 3 + k] = g + rng.normal(0, 0.2 * noise + 0.005, n)
    tilt = np.array(mean) / 9.8
    out[:, 6:9] = MAG_FIELD * (0.8 + 0.2 * tilt) + rng.normal(0, 0.4, (n, 3))
    return out


def synthetic_records(
    subjects: Sequence[str] = FIXTURE_SUBJECTS,
    activities: Sequence[str] = FIXTURE_ACTIVITIES,
    rows_per_session: int = FIXTURE_ROWS_PER_SESSION,
    fs: float = 50.0,
    seed: int = 0,
    dataset: str = "SHOAIB",
    device: str = "synthetic",
    position: str = "upper_arm",
    channels: Sequence[ChannelId] = ALL_CHANNELS,
) -> pd.DataFrame:
    """Canonical record frame with one session per (subject, activity)."""
    rng = np.random.default_rng(seed)
    chans = ordered_channels(channels)
    cols = [ALL_CHANNELS.index(c) for c in chans]
    frames = []
    for si, subj in enumerate(subjects):
        gain = 0.9 + 0.2 * si / max(1, len(subjects) - 1)
        for act in activities:
            sig = activity_signal(act, rows_per_session, fs, rng, subject_gain=gain)
            df = pd.DataFrame({"timestamp": np.arange(rows_per_session) / fs})
            df["subject"] = str(subj)
            df["activity"] = act
            df["dataset"] = DatasetId.parse(dataset).value
            df["device"] = device
            df["position"] = position
            for name in CHANNEL_NAMES:
                df[name] = np.nan
            for j, c in zip(cols, chans):
                df[c.name] = sig[:, j]
            frames.append(df)
    return pd.concat(frames, ignore_index=True)


def synthetic_windows(
    n: int = 1000,
    window_len: int = 200,
    fs: float = 50.0,
    seed: int = 0,
    activities: Sequence[str] = ("walking", "running", "sitting", "standing", "walking_upstairs", "walking_downstairs"),
) -> WindowSet:
    """``n`` independent (window_len x 9) windows cycling through ``activities``."""
    rng = np.random.default_rng(seed)
    wins = []
    for i in range(n):
        act = activities[i % len(activities)]
        sig = activity_signal(act, window_len, fs, rng, subject_gain=rng.uniform(0.85, 1.15))
        wins.append(Window(sig, ALL_CHANNELS, act, f"s{i % 10}", DatasetId.SHOAIB, fs, 0))
    return from_windows(wins)


# --------------------------------------------------------------------------
# raw layouts of the public distributions
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.6f}"


SHOAIB_BLOCKS = ("Left_pocket", "Right_pocket", "Wrist", "Upper_arm", "Belt")
SHOAIB_BLOCK_COLS = ("time_stamp", "Ax", "Ay", "Az", "Lx", "Ly", "Lz", "Gx", "Gy", "Gz", "Mx", "My", "Mz")


def shoaib_participant_text(
    rows: dict[str, np.ndarray],
    labels: Sequence[str],
    t0: float = 1.0e12,
    blocks: Sequence[str] = SHOAIB_BLOCKS,
) -> str:
    """CSV text for one ``Participant_<n>.csv``: a block per body position.

    ``rows`` maps block name -> (n, 9) samples; positions without data get
    zeros.  The activity label follows the last block.
    """
    n = len(labels)
    top, names = [], []
    for blk in blocks:
        top += [blk] + [""] * (len(SHOAIB_BLOCK_COLS) - 1)
        names += list(SHOAIB_BLOCK_COLS)
    top.append("")
    names.append("Activity_Label")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(top)
    w.writerow(names)
    for i in range(n):
        line = []
        for blk in blocks:
            x = rows.get(blk, np.zeros((n, 9)))[i]
            lin = x[:3] - np.array([0.0, 9.8, 0.0])
            line += [f"{t0 + i * 20:.0f}", *map(_fmt, x[:3]), *map(_fmt, lin), *map(_fmt, x[3:9])]
        line.append(labels[i])
        w.writerow(line)
    return buf.getvalue()


def write_shoaib_layout(
    root: str | Path,
    df: pd.DataFrame,
    position_block: str = "Upper_arm",
    blocks: Sequence[str] = SHOAIB_BLOCKS,
) -> Path:
    """Write ``df`` (canonical, 9 channels) as ``DataCollected/Participant_<subject>.csv``."""
    out = Path(root) / "DataCollected"
    out.mkdir(parents=True, exist_ok=True)
    for subj, g in df.groupby("subject", sort=False):
        x = g[list(CHANNEL_NAMES)].to_numpy(float)
        text = shoaib_participant_text({position_block: x}, list(g["activity"]), blocks=blocks)
        (out / f"Participant_{subj}.csv").write_text(text, encoding="utf-8")
    return out


def write_hhar_layout(root: str | Path, df: pd.DataFrame, model: str = "nexus4", device: str = "nexus4_1") -> Path:
    """``Activity recognition exp/Phones_{accelerometer,gyroscope}.csv`` from a canonical frame."""
    base = Path(root) / "Activity recognition exp"
    base.mkdir(parents=True, exist_ok=True)
    for kind, cols in (("accelerometer", ("ax", "ay", "az")), ("gyroscope", ("gx", "gy", "gz"))):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Index", "Arrival_Time", "Creation_Time", "x", "y", "z", "User", "Model", "Device", "gt"])
        for i, r in enumerate(df.itertuples(index=False)):
            ns = int(round(float(r.timestamp) * 1e9))
            w.writerow([i, ns // 1_000_000, ns, *(_fmt(getattr(r, c)) for c in cols),
                        r.subject, model, device, r.activity])
        (base / f"Phones_{kind}.csv").write_text(buf.getvalue(), encoding="utf-8")
    return base


MOTIONSENSE_CODES = {"walking": "wlk", "running": "jog", "jogging": "jog", "sitting": "sit",
                     "standing": "std", "walking_upstairs": "ups", "walking_downstairs": "dws"}


def write_motionsense_layout(root: str | Path, df: pd.DataFrame, trial: int = 1) -> Path:
    """``A_DeviceMotion_data/<code>_<trial>/sub_<n>.csv`` (user acceleration in g)."""
    base = Path(root) / "A_DeviceMotion_data"
    for (subj, act), g in df.groupby(["subject", "activity"], sort=False):
        d = base / f"{MOTIONSENSE_CODES[act]}_{trial}"
        d.mkdir(parents=True, exist_ok=True)
        out = pd.DataFrame({
            "": np.arange(len(g)),
            "attitude.roll": 0.0, "attitude.pitch": 0.0, "attitude.yaw": 0.0,
            "gravity.x": 0.0, "gravity.y": 0.0, "gravity.z": 0.0,
            "rotationRate.x": g["gx"].to_numpy(), "rotationRate.y": g["gy"].to_numpy(),
            "rotationRate.z": g["gz"].to_numpy(),
            "userAcceleration.x": g["ax"].to_numpy(), "userAcceleration.y": g["ay"].to_numpy(),
            "userAcceleration.z": g["az"].to_numpy(),
        })
        out.to_csv(d / f"sub_{subj}.csv", index=False, float_format="%.6f", lineterminator="\n")
    return base


UCI_LABELS = ("WALKING", "WALKING_UPSTAIRS", "WALKING_DOWNSTAIRS", "SITTING", "STANDING", "LAYING")
UCI_SIGNALS = ("total_acc_x", "total_acc_y", "total_acc_z", "body_gyro_x", "body_gyro_y", "body_gyro_z")


def write_ucihar_layout(root: str | Path, df: pd.DataFrame, test_subjects: Sequence[str] = ()) -> Path:
    """``UCI HAR Dataset`` with 128-sample windows at 50% overlap per session."""
    base = Path(root) / "UCI HAR Dataset"
    base.mkdir(parents=True, exist_ok=True)
    (base / "activity_labels.txt").write_text(
        "".join(f"{i + 1} {lab}\n" for i, lab in enumerate(UCI_LABELS)))
    code = {lab.lower(): i + 1 for i, lab in enumerate(UCI_LABELS)}
    split_rows: dict[str, list] = {"train": [], "test": []}
    for (subj, act), g in df.groupby(["subject", "activity"], sort=False):
        x = g[["ax", "ay", "az", "gx", "gy", "gz"]].to_numpy(float)
        split = "test" if str(subj) in set(map(str, test_subjects)) else "train"
        for a in range(0, len(x) - 128 + 1, 64):
            split_rows[split].append((int(subj), code[act], x[a : a + 128]))
    for split, items in split_rows.items():
        sig_dir = base / split / "Inertial Signals"
        sig_dir.mkdir(parents=True, exist_ok=True)
        (base / split / f"subject_{split}.txt").write_text("".join(f"{s}\n" for s, _, _ in items))
        (base / split / f"y_{split}.txt").write_text("".join(f"{y}\n" for _, y, _ in items))
        for k, name in enumerate(UCI_SIGNALS):
            lines = [" ".join(f"{v:.7e}" for v in w[:, k]) for _, _, w in items]
            (sig_dir / f"{name}_{split}.txt").write_text("".join(line + "\n" for line in lines))
    return base


WISDM_CODES = {"walking": "A", "running": "B", "jogging": "B", "stairs": "C", "sitting": "D", "standing": "E"}


def write_wisdm_layout(root: str | Path, df: pd.DataFrame, device: str = "phone", legacy: bool = False) -> Path:
    """WISDM raw accelerometer text; ``legacy`` writes the single v1.1 file."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if legacy:
        names = {"walking": "Walking", "running": "Jogging", "jogging": "Jogging", "sitting": "Sitting",
                 "standing": "Standing", "walking_upstairs": "Upstairs", "walking_downstairs": "Downstairs"}
        lines = [
            f"{r.subject},{names[r.activity]},{int(round(r.timestamp * 1e9))},{_fmt(r.ax)},{_fmt(r.ay)},{_fmt(r.az)};"
            for r in df.itertuples(index=False)
        ]
        path = root / "WISDM_ar_v1.1_raw.txt"
        path.write_text("\n".join(lines) + "\n")
        return path
    d = root / "wisdm-dataset" / "raw" / device / "accel"
    d.mkdir(parents=True, exist_ok=True)
    for subj, g in df.groupby("subject", sort=False):
        lines = [
            f"{r.subject},{WISDM_CODES[r.activity]},{int(round(r.timestamp * 1e9))},{_fmt(r.ax)},{_fmt(r.ay)},{_fmt(r.az)};"
            for r in g.itertuples(index=False)
        ]
        (d / f"data_{subj}_accel_{device}.txt").write_text("\n".join(lines) + "\n")
    return d


# --------------------------------------------------------------------------
# bundled fixture
# --------------------------------------------------------------------------


def fixture_records(seed: int = FIXTURE_SEED) -> pd.DataFrame:
    """1,000 rows: 2 subjects x 4 activities x 125 samples at 50 Hz."""
    return synthetic_records(seed=seed)


def build_fixture_dir(root: str | Path, seed: int = FIXTURE_SEED) -> Path:
    """Write the fixture in the Shoaib raw layout (upper-arm block only) under ``root``."""
    write_shoaib_layout(root, fixture_records(seed), blocks=("Upper_arm",))
    return Path(root)


def install_fixture(dest: str | Path) -> Path:
    """Copy the bundled fixture (Shoaib raw layout) to ``dest``."""
    dest = Path(dest) / "DataCollected"
    dest.mkdir(parents=True, exist_ok=True)
    src = resources.files("harlm").joinpath("data", FIXTURE_NAME)
    for name in ("Participant_1.csv", "Participant_2.csv"):
        with resources.as_file(src.joinpath(name)) as p:
            shutil.copyfile(p, dest / name)
    return dest.parent
