"""Per-channel time- and frequency-domain window statistics.

Each channel of a window maps to seven numbers, in this order::

    mean, std, range, mean_freq, spectral_entropy, band_power_low, band_power_high

``std`` is the population (1/W) deviation.  Frequency statistics come from
the power spectrum ``|DFT|^2`` of the mean-removed series and ignore the DC
bin; spectral entropy is normalised by ``ln(#bins)`` so it lies in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from harlm import kernels
from harlm.dataset import LabeledDataset, vocabulary_of
from harlm.records import ChannelId, DatasetId
from harlm.windowing import Window, WindowSet

STAT_NAMES = (
    "mean",
    "std",
    "range",
    "mean_freq",
    "spectral_entropy",
    "band_power_low",
    "band_power_high",
)
N_STATS = len(STAT_NAMES)
TAPERS = (None, "hann")


class NonFiniteInputError(ValueError):
    def __init__(self, channel: str | None, msg: str = "non-finite sample"):
        where = f" in channel {channel}" if channel else ""
        super().__init__(f"{msg}{where}")
        self.channel = channel


@dataclass(frozen=True)
class FeatureConfig:
    band_split_hz: float = 3.0
    band_low_hz: float | None = None  # None: first non-DC bin
    taper: str | None = None

    def __post_init__(self):
        if self.taper not in TAPERS:
            raise ValueError(f"taper must be one of {TAPERS}")
        if not self.band_split_hz > 0:
            raise ValueError("band_split_hz must be positive")

    def as_dict(self) -> dict:
        return {"band_split_hz": self.band_split_hz, "band_low_hz": self.band_low_hz, "taper": self.taper}


@dataclass(frozen=True)
class Spectrum:
    magnitudes: np.ndarray  # power at bins 0..W//2
    bin_width_hz: float
    sampling_rate_hz: float

    def __post_init__(self):
        if (self.magnitudes < 0).any():
            raise ValueError("spectrum magnitudes must be non-negative")

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.magnitudes.size) * self.bin_width_hz


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # (C, 7)
    channel_order: tuple[ChannelId, ...]
    activity: str
    subject_id: str
    dataset_id: DatasetId | str
    sampling_rate_hz: float

    @property
    def names(self) -> list[str]:
        return feature_names(self.channel_order)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def get(self, channel: str | ChannelId, stat: str) -> float:
        name = channel.name if isinstance(channel, ChannelId) else channel
        ci = [c.name for c in self.channel_order].index(name)
        return float(self.values[ci, STAT_NAMES.index(stat)])


def feature_names(channels: Sequence[ChannelId]) -> list[str]:
    return [f"{c.name}_{s}" for c in channels for s in STAT_NAMES]


def channels_from_names(names: Sequence[str]) -> tuple[ChannelId, ...]:
    """Recover the channel order from ``<channel>_<stat>`` column names."""
    out: list[ChannelId] = []
    for n in names:
        ch = ChannelId.parse(n.split("_", 1)[0])
        if ch not in out:
            out.append(ch)
    if feature_names(out) != list(names):
        raise ValueError("feature columns are not in <channel>_<stat> canonical order")
    return tuple(out)


def _check_series(series, channel=None) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("series must be 1-D with at least 2 samples")
    if not np.isfinite(x).all():
        raise NonFiniteInputError(channel)
    return x


def time_features(series, channel: str | None = None) -> tuple[float, float, float]:
    """(mean, population std, max - min) of one channel."""
    x = _check_series(series, channel)
    m, s, r = kernels.time_stats(x[None, :, None])[0, 0]
    return float(m), float(s), float(r)


def _taper(w: int, taper: str | None) -> np.ndarray | None:
    if taper == "hann":
        return np.hanning(w)
    return None


def _power(batch: np.ndarray, taper: str | None) -> np.ndarray:
    """(N, W, C) -> (N, C, W//2 + 1) power of the mean-removed series."""
    x = batch - batch.mean(axis=1, keepdims=True)
    win = _taper(batch.shape[1], taper)
    if win is not None:
        x = x * win[None, :, None]
    spec = np.fft.rfft(x, axis=1)
    p = spec.real**2 + spec.imag**2
    return np.ascontiguousarray(np.moveaxis(p, 1, 2))


def power_spectrum(series, fs: float, taper: str | None = None, channel: str | None = None) -> Spectrum:
    """|DFT|^2 of the mean-removed series at bins 0..W//2."""
    x = _check_series(series, channel)
    if not fs > 0:
        raise ValueError("fs must be positive")
    p = _power(x[None, :, None], taper)[0, 0]
    return Spectrum(magnitudes=p, bin_width_hz=fs / x.size, sampling_rate_hz=float(fs))


def freq_features(
    spectrum: Spectrum, band_split_hz: float = 3.0, band_low_hz: float | None = None
) -> tuple[float, float, float, float]:
    """(mean_freq, spectral_entropy, band_power_low, band_power_high); all zero without power."""
    f_lo = spectrum.bin_width_hz if band_low_hz is None else band_low_hz
    out = kernels.freq_stats(spectrum.magnitudes[None, None, :], spectrum.bin_width_hz, f_lo, band_split_hz)
    return tuple(float(v) for v in out[0, 0])


def _extract_batch(batch: np.ndarray, fs: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """(N, W, C) + per-window fs -> (N, C, 7)."""
    n, w, c = batch.shape
    out = np.empty((n, c, N_STATS))
    out[..., :3] = kernels.time_stats(batch)
    power = _power(batch, config.taper)
    # windows sharing a sampling rate share bin geometry
    for rate in np.unique(fs):
        sel = np.flatnonzero(fs == rate)
        bw = rate / w
        f_lo = bw if config.band_low_hz is None else config.band_low_hz
        out[sel, :, 3:] = kernels.freq_stats(power[sel], bw, f_lo, config.band_split_hz)
    return out


def _raise_nonfinite(batch: np.ndarray, channels: Sequence[ChannelId]) -> None:
    bad = ~np.isfinite(batch).all(axis=(0, 1))
    if bad.any():
        raise NonFiniteInputError(channels[int(np.argmax(bad))].name)


def extract(window: Window, config: FeatureConfig = FeatureConfig()) -> FeatureVector:
    """Feature vector of one window."""
    batch = window.samples[None, :, :].astype(np.float64)
    _raise_nonfinite(batch, window.channel_order)
    vals = _extract_batch(batch, np.array([window.sampling_rate_hz]), config)[0]
    return FeatureVector(
        values=vals,
        channel_order=window.channel_order,
        activity=window.activity,
        subject_id=window.subject_id,
        dataset_id=window.dataset_id,
        sampling_rate_hz=window.sampling_rate_hz,
    )


def extract_all(
    windows: WindowSet,
    config: FeatureConfig = FeatureConfig(),
    chunk: int = 4096,
    label_vocabulary: Sequence[str] | None = None,
) -> LabeledDataset:
    """Features of every window as a :class:`LabeledDataset` (one row per window)."""
    n = len(windows)
    c = len(windows.channel_order)
    out = np.empty((n, c * N_STATS))
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        batch = windows.batch(slice(a, b))
        _raise_nonfinite(batch, windows.channel_order)
        out[a:b] = _extract_batch(batch, windows.fs[a:b], config).reshape(b - a, -1)
    return LabeledDataset(
        features=out,
        labels=windows.activity,
        subjects=windows.subject,
        label_vocabulary=list(label_vocabulary) if label_vocabulary else vocabulary_of(windows.activity),
        feature_names=feature_names(windows.channel_order),
        datasets=windows.dataset,
        fs=windows.fs,
        extra={"feature_config": config.as_dict()},
    )


def row_vector(data: LabeledDataset, i: int) -> FeatureVector:
    """Feature vector view of row ``i`` of a feature dataset."""
    chans = channels_from_names(data.feature_names)
    fs = float(data.fs[i])
    return FeatureVector(
        values=data.features[i].reshape(len(chans), N_STATS).copy(),
        channel_order=chans,
        activity=str(data.labels[i]),
        subject_id=str(data.subjects[i]),
        dataset_id=str(data.datasets[i]),
        sampling_rate_hz=fs if math.isfinite(fs) else 0.0,
    )
