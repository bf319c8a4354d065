"""Statistical feature catalog computed over metric windows.

Fixed catalog order; undefined features yield NaN sentinels so selection can
skip them. A length-1 series defines only mean/min/max/median/last_value;
length >= 2 defines the full catalog except moments that need nonzero
variance (skewness, kurtosis, autocorr_lag1).
"""

from __future__ import annotations

import numpy as np

from .store import MetricSeries

FEATURES: tuple[str, ...] = (
    "mean",
    "std",
    "min",
    "max",
    "median",
    "last_value",
    "slope",
    "iqr",
    "skewness",
    "kurtosis",
    "autocorr_lag1",
    "energy",
)

FEATURE_INDEX = {name: i for i, name in enumerate(FEATURES)}


def extract_features(series) -> np.ndarray:
    """Feature vector (len 12, catalog order) for a window's values.

    Accepts a MetricSeries or a plain value array. Raises on empty input.
    """
    if isinstance(series, MetricSeries):
        v = np.asarray(series.values, dtype=np.float64)
    else:
        v = np.asarray(series, dtype=np.float64)
    n = v.shape[0]
    if n == 0:
        raise ValueError("cannot extract features from an empty window")
    out = np.full(len(FEATURES), np.nan)
    out[FEATURE_INDEX["mean"]] = v.mean()
    out[FEATURE_INDEX["min"]] = v.min()
    out[FEATURE_INDEX["max"]] = v.max()
    out[FEATURE_INDEX["median"]] = np.median(v)
    out[FEATURE_INDEX["last_value"]] = v[-1]
    if n < 2:
        return out

    mean = float(v.mean())
    dev = v - mean
    m2 = float(np.mean(dev**2))
    out[FEATURE_INDEX["std"]] = np.sqrt(m2)

    idx = np.arange(n, dtype=np.float64)
    ic = idx - idx.mean()
    out[FEATURE_INDEX["slope"]] = float(np.dot(ic, dev) / np.dot(ic, ic))

    q25, q75 = np.percentile(v, [25.0, 75.0])
    out[FEATURE_INDEX["iqr"]] = float(q75 - q25)

    if m2 > 0:
        m3 = float(np.mean(dev**3))
        m4 = float(np.mean(dev**4))
        out[FEATURE_INDEX["skewness"]] = m3 / m2**1.5
        out[FEATURE_INDEX["kurtosis"]] = m4 / m2**2 - 3.0
        num = float(np.dot(dev[:-1], dev[1:]))
        out[FEATURE_INDEX["autocorr_lag1"]] = num / (n * m2)

    out[FEATURE_INDEX["energy"]] = float(np.dot(v, v))
    return out


def feature_matrix(windows) -> np.ndarray:
    """(n_windows, 12) matrix of feature vectors."""
    return np.vstack([extract_features(w) for w in windows])
