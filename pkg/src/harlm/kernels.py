"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` loop version (``_nb_*``) and a
vectorised numpy version (``_np_*``).  The public wrappers pick one at call
time via :func:`harlm._accel.numba_enabled`, so flipping
``HARLM_DISABLE_NUMBA`` inside a running process takes effect immediately.

The two paths implement the same arithmetic; split search is bit-identical
across paths (integer class counts), the floating-point reductions may differ
in the last ulp.
"""
from __future__ import annotations

import numpy as np

from harlm._accel import njit, numba_enabled

# --------------------------------------------------------------------------
# per-window time-domain statistics
# --------------------------------------------------------------------------


@njit(cache=True)
def _nb_time_stats(batch):
    n, w, c = batch.shape
    out = np.empty((n, c, 3))
    for i in range(n):
        for j in range(c):
            s = 0.0
            lo = batch[i, 0, j]
            hi = lo
            for r in range(w):
                v = batch[i, r, j]
                s += v
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            mean = s / w
            ss = 0.0
            for r in range(w):
                d = batch[i, r, j] - mean
                ss += d * d
            out[i, j, 0] = mean
            out[i, j, 1] = np.sqrt(ss / w)
            out[i, j, 2] = hi - lo
    return out


def _np_time_stats(batch):
    mean = batch.mean(axis=1)
    std = np.sqrt(((batch - mean[:, None, :]) ** 2).mean(axis=1))
    rng = batch.max(axis=1) - batch.min(axis=1)
    return np.stack([mean, std, rng], axis=-1)


def time_stats(batch: np.ndarray) -> np.ndarray:
    """(N, W, C) windows -> (N, C, 3) array of mean, population std, range."""
    batch = np.ascontiguousarray(batch, dtype=np.float64)
    if numba_enabled():
        return _nb_time_stats(batch)
    return _np_time_stats(batch)


# --------------------------------------------------------------------------
# spectral statistics over a one-sided power spectrum
# --------------------------------------------------------------------------


@njit(cache=True)
def _nb_freq_stats(power, bin_width, f_lo, f_split):
    n, c, nbins = power.shape
    out = np.zeros((n, c, 4))
    m = nbins - 1
    log_m = np.log(m) if m > 1 else 0.0
    for i in range(n):
        for j in range(c):
            tot = 0.0
            for b in range(1, nbins):
                tot += power[i, j, b]
            if tot <= 0.0:
                continue
            mf = 0.0
            ent = 0.0
            low = 0.0
            high = 0.0
            for b in range(1, nbins):
                p = power[i, j, b]
                f = b * bin_width
                mf += f * p
                q = p / tot
                if q > 0.0:
                    ent -= q * np.log(q)
                if f >= f_split:
                    high += p
                elif f >= f_lo:
                    low += p
            out[i, j, 0] = mf / tot
            out[i, j, 1] = ent / log_m if log_m > 0.0 else 0.0
            out[i, j, 2] = low
            out[i, j, 3] = high
    return out


def _np_freq_stats(power, bin_width, f_lo, f_split):
    n, c, nbins = power.shape
    p = power[..., 1:]
    f = np.arange(1, nbins) * bin_width
    tot = p.sum(axis=-1)
    live = tot > 0.0
    safe = np.where(live, tot, 1.0)
    q = p / safe[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(q > 0.0, q * np.log(np.where(q > 0.0, q, 1.0)), 0.0)
    m = nbins - 1
    log_m = np.log(m) if m > 1 else 0.0
    ent = -plogp.sum(axis=-1) / log_m if log_m > 0.0 else np.zeros_like(tot)
    high_mask = f >= f_split
    low_mask = (f >= f_lo) & ~high_mask
    out = np.stack(
        [
            (p * f).sum(axis=-1) / safe,
            ent,
            (p * low_mask).sum(axis=-1),
            (p * high_mask).sum(axis=-1),
        ],
        axis=-1,
    )
    out[~live] = 0.0
    return out


def freq_stats(power: np.ndarray, bin_width: float, f_lo: float, f_split: float) -> np.ndarray:
    """(N, C, B) power spectra -> (N, C, 4): mean freq, entropy, low/high band power.

    Bin 0 (DC) is ignored.  A spectrum with zero non-DC power maps to zeros.
    """
    power = np.ascontiguousarray(power, dtype=np.float64)
    if numba_enabled():
        return _nb_freq_stats(power, float(bin_width), float(f_lo), float(f_split))
    return _np_freq_stats(power, float(bin_width), float(f_lo), float(f_split))


# --------------------------------------------------------------------------
# CART split search (Gini)
# --------------------------------------------------------------------------
#
# Minimising weighted Gini  sum_side n_s * (1 - sum_k (c_k/n_s)^2)  is the same
# as maximising  sum_side (sum_k c_k^2) / n_s.  Squared counts stay integral,
# which keeps both paths bit-identical.


@njit(cache=True)
def _nb_best_split(X, y, idx, n_classes, features, min_features):
    n = idx.size
    total = np.zeros(n_classes, dtype=np.int64)
    for i in range(n):
        total[y[idx[i]]] += 1
    best_gain = -1.0
    best_f = -1
    best_thr = 0.0
    vals = np.empty(n)
    labs = np.empty(n, dtype=np.int64)
    left = np.zeros(n_classes, dtype=np.int64)
    for jj in range(features.size):
        if jj >= min_features and best_f >= 0:
            break
        f = features[jj]
        for i in range(n):
            vals[i] = X[idx[i], f]
        order = np.argsort(vals, kind="mergesort")
        if vals[order[0]] == vals[order[n - 1]]:
            continue
        for i in range(n):
            labs[i] = y[idx[order[i]]]
        left[:] = 0
        for i in range(n - 1):
            left[labs[i]] += 1
            a = vals[order[i]]
            b = vals[order[i + 1]]
            if a == b:
                continue
            nl = i + 1
            nr = n - nl
            sl = 0
            sr = 0
            for k in range(n_classes):
                sl += left[k] * left[k]
                r = total[k] - left[k]
                sr += r * r
            gain = sl / nl + sr / nr
            if gain > best_gain:
                best_gain = gain
                best_f = f
                thr = 0.5 * (a + b)
                if thr >= b:
                    thr = a
                best_thr = thr
    return best_f, best_thr, best_gain


def _np_best_split(X, y, idx, n_classes, features, min_features):
    n = idx.size
    ysub = y[idx]
    total = np.bincount(ysub, minlength=n_classes).astype(np.int64)
    best_gain, best_f, best_thr = -1.0, -1, 0.0
    nl = np.arange(1, n, dtype=np.int64)
    nr = n - nl
    for jj, f in enumerate(features):
        if jj >= min_features and best_f >= 0:
            break
        vals = X[idx, f]
        order = np.argsort(vals, kind="mergesort")
        sv = vals[order]
        if sv[0] == sv[-1]:
            continue
        onehot = np.zeros((n, n_classes), dtype=np.int64)
        onehot[np.arange(n), ysub[order]] = 1
        left = np.cumsum(onehot, axis=0)[:-1]
        right = total - left
        gain = (left * left).sum(axis=1) / nl + (right * right).sum(axis=1) / nr
        valid = sv[:-1] != sv[1:]
        gain = np.where(valid, gain, -1.0)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = float(gain[i])
            best_f = int(f)
            a, b = sv[i], sv[i + 1]
            thr = 0.5 * (a + b)
            best_thr = float(a if thr >= b else thr)
    return best_f, best_thr, best_gain


def best_split(X, y, idx, n_classes, features, min_features):
    """Best Gini split of the rows ``idx``.

    Candidate columns are tried in ``features`` order; at least
    ``min_features`` are examined and the search keeps going past that only
    while no valid split has been found.  Returns ``(feature, threshold,
    gain)`` with ``feature == -1`` when every candidate column is constant.
    Rows with ``x[feature] <= threshold`` go left.
    """
    if numba_enabled():
        f, thr, gain = _nb_best_split(X, y, idx, n_classes, features, min_features)
        return int(f), float(thr), float(gain)
    return _np_best_split(X, y, idx, n_classes, features, min_features)


@njit(cache=True)
def _nb_tree_apply(feature, threshold, left, right, X):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while left[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def _np_tree_apply(feature, threshold, left, right, X):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    active = left[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[r]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active = left[node] >= 0
    return node


def tree_apply(feature, threshold, left, right, X) -> np.ndarray:
    """Leaf index reached by each row of ``X``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if numba_enabled():
        return _nb_tree_apply(feature, threshold, left, right, X)
    return _np_tree_apply(feature, threshold, left, right, X)


# --------------------------------------------------------------------------
# one-vs-rest hinge SGD
# --------------------------------------------------------------------------


@njit(cache=True)
def _nb_hinge_sgd(X, Y, W, b, order, lam, eta0, t0):
    n_steps = order.size
    k_heads, d = W.shape
    t = t0
    for s in range(n_steps):
        i = order[s]
        eta = eta0 / (1.0 + lam * eta0 * t)
        shrink = 1.0 - eta * lam
        for k in range(k_heads):
            m = b[k]
            for j in range(d):
                m += W[k, j] * X[i, j]
            m *= Y[i, k]
            for j in range(d):
                W[k, j] *= shrink
            if m < 1.0:
                for j in range(d):
                    W[k, j] += eta * Y[i, k] * X[i, j]
                b[k] += eta * Y[i, k]
        t += 1
    return t


def _np_hinge_sgd(X, Y, W, b, order, lam, eta0, t0):
    t = t0
    for i in order:
        eta = eta0 / (1.0 + lam * eta0 * t)
        x = X[i]
        yi = Y[i]
        m = yi * (W @ x + b)
        W *= 1.0 - eta * lam
        hit = m < 1.0
        if hit.any():
            W[hit] += (eta * yi[hit])[:, None] * x
            b[hit] += eta * yi[hit]
        t += 1
    return t


def hinge_sgd(X, Y, W, b, order, lam, eta0, t0=0) -> int:
    """In-place SGD on ``lam/2 |w|^2 + hinge`` for every head; returns the step counter.

    ``Y`` holds +-1 targets per head, ``order`` the sample visiting order.
    Step size is ``eta0 / (1 + lam * eta0 * t)``; the bias is not shrunk.
    """
    if numba_enabled():
        return int(_nb_hinge_sgd(X, Y, W, b, order, float(lam), float(eta0), int(t0)))
    return _np_hinge_sgd(X, Y, W, b, order, float(lam), float(eta0), int(t0))
