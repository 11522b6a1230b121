"""Exploratory statistics: channel correlations, 2-D PCA, density histograms.

Outputs are plain tables meant to be written as CSV and plotted elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from harlm.records import present_channels

POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000


@dataclass
class CorrelationMatrix:
    values: np.ndarray  # (C, C)
    channel_order: list[str]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.channel_order, columns=self.channel_order)


def correlation_matrix(data, names: Sequence[str] | None = None) -> CorrelationMatrix:
    """Pearson correlation between columns.

    ``data`` is an (N, C) array or a canonical record frame (its present
    channels are used).  Zero-variance columns get 0 off the diagonal.
    """
    if isinstance(data, pd.DataFrame):
        chans = present_channels(data)
        names = [c.name for c in chans]
        X = data[names].dropna().to_numpy(dtype=np.float64)
    else:
        X = np.asarray(data, dtype=np.float64)
        names = list(names) if names is not None else [f"c{i}" for i in range(X.shape[1])]
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    Z = X - X.mean(axis=0)
    ss = np.sqrt((Z * Z).sum(axis=0))
    live = ss > 0
    if not live.any():
        raise ValueError("every column is constant; correlation undefined")
    Zn = np.zeros_like(Z)
    Zn[:, live] = Z[:, live] / ss[live]
    R = Zn.T @ Zn
    R = np.clip(0.5 * (R + R.T), -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return CorrelationMatrix(R, list(names))


# --------------------------------------------------------------------------
# PCA by power iteration with deflation
# --------------------------------------------------------------------------


@dataclass
class PcaProjection:
    components: np.ndarray  # (2, D) unit loadings
    explained_variance_ratio: np.ndarray  # (2,)
    eigenvalues: np.ndarray  # (2,)
    points: np.ndarray  # (N, 2)
    labels: np.ndarray | None
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return ((np.asarray(X, dtype=np.float64) - self.mean) / self.scale) @ self.components.T

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"pc1": self.points[:, 0], "pc2": self.points[:, 1]})
        df["activity"] = self.labels if self.labels is not None else ""
        return df


def _orient(v: np.ndarray) -> np.ndarray:
    return v if v[int(np.argmax(np.abs(v)))] >= 0 else -v


def power_iteration(
    C: np.ndarray,
    v0: np.ndarray,
    orthogonal_to: Sequence[np.ndarray] = (),
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
) -> tuple[float, np.ndarray, int]:
    """Dominant eigenpair of a symmetric PSD matrix.

    Iterates ``v <- Cv / |Cv|`` until successive unit vectors differ by less
    than ``tol`` (up to sign), keeping ``v`` orthogonal to ``orthogonal_to``.
    Returns ``(eigenvalue, vector, iterations)``.
    """
    def project(x):
        for u in orthogonal_to:
            x = x - (x @ u) * u
        return x

    v = project(np.asarray(v0, dtype=np.float64))
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValueError("start vector lies in the excluded subspace")
    v /= nv
    scale = max(float(np.abs(C).max()), 1e-300)
    it = 0
    for it in range(1, max_iter + 1):
        w = project(C @ v)
        nw = np.linalg.norm(w)
        if nw <= 1e-14 * scale:
            # v is (numerically) in the null space: eigenvalue 0
            return 0.0, v, it
        w /= nw
        if w @ v < 0:
            w = -w
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return float(v @ C @ v), v, it


def pca2(features, labels=None, seed: int = 0) -> PcaProjection:
    """First two principal axes of column-standardised data.

    Each component is oriented so its largest-magnitude loading is positive.
    """
    X = np.asarray(features, dtype=np.float64)
    n, d = X.shape
    if n <= 2 or d < 2:
        raise ValueError("pca2 needs N > 2 rows and D >= 2 columns")
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    if not (sd > 0).any():
        raise ValueError("data has rank 0")
    scale = np.where(sd > 0, sd, 1.0)
    Z = (X - mean) / scale
    C = (Z.T @ Z) / n
    C = 0.5 * (C + C.T)
    total = float(np.trace(C))
    rng = np.random.default_rng(seed)
    lam1, v1, _ = power_iteration(C, rng.normal(size=d))
    v1 = _orient(v1)
    # deflate, and keep the second search orthogonal to the first axis
    C2 = C - lam1 * np.outer(v1, v1)
    lam2, v2, _ = power_iteration(C2, rng.normal(size=d), orthogonal_to=[v1])
    v2 = _orient(v2 - (v2 @ v1) * v1)
    v2 /= np.linalg.norm(v2)
    lam2 = max(lam2, 0.0)
    comps = np.stack([v1, v2])
    lams = np.array([lam1, lam2])
    return PcaProjection(
        components=comps,
        explained_variance_ratio=lams / total,
        eigenvalues=lams,
        points=Z @ comps.T,
        labels=None if labels is None else np.asarray(labels).astype(str),
        mean=mean,
        scale=scale,
    )


# --------------------------------------------------------------------------
# histograms
# --------------------------------------------------------------------------


@dataclass
class Histogram:
    bin_edges: np.ndarray
    densities: np.ndarray
    feature_name: str = ""

    @property
    def mass(self) -> float:
        return float((self.densities * np.diff(self.bin_edges)).sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "feature": self.feature_name,
            "bin_lo": self.bin_edges[:-1],
            "bin_hi": self.bin_edges[1:],
            "density": self.densities,
        })


def histogram(series, bins: int = 50, feature_name: str = "") -> Histogram:
    """Equal-width density histogram over [min, max] (widened by 0.5 when flat)."""
    x = np.asarray(series, dtype=np.float64).ravel()
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise ValueError("histogram needs at least one finite value")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    dens, edges = np.histogram(x, bins=bins, range=(lo, hi), density=True)
    return Histogram(bin_edges=edges, densities=dens, feature_name=feature_name)
