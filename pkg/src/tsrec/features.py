"""Correlation clustering and rolling per-series features."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from tsrec.errors import ConfigError, DataError
from tsrec.panel import TimeSeriesPanel

MA_WINDOWS = (5, 10, 15, 30)
STAT_WINDOW = 30
WARMUP = max(max(MA_WINDOWS), STAT_WINDOW)
INDICATOR_PERIOD = 14

BASE_FEATURES = (
    "ma5", "ma10", "ma15", "ma30",
    "roll_mean", "roll_std", "roll_skew", "roll_kurt", "roll_acf1",
    "cluster",
)
INDICATOR_FEATURES = ("rsi14", "atr14", "obv")

# Channels measured in the units of the series (rescaled per entity downstream).
LEVEL_FEATURES = frozenset({"ma5", "ma10", "ma15", "ma30", "roll_mean"})
SCALE_FEATURES = frozenset({"roll_std", "atr14"})


@dataclass
class FeatureSet:
    """Feature tensor aligned to the panel timeline.

    ``values`` is N x T x F; rows before ``warmup`` are NaN.
    """

    names: tuple[str, ...]
    values: np.ndarray
    warmup: int = WARMUP

    def truncated(self) -> np.ndarray:
        return self.values[:, self.warmup:, :]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, :, self.names.index(name)]


def default_n_clusters(n: int) -> int:
    return max(1, math.ceil(math.sqrt(n)))


def correlation_distance(values: np.ndarray) -> np.ndarray:
    """d(i, j) = 1 - corr(i, j); constant series sit at distance 1 from everything."""
    values = np.asarray(values, dtype=np.float64)
    centered = values - values.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered ** 2).sum(axis=1))
    const = norms == 0
    if const.any():
        warnings.warn(
            f"{int(const.sum())} constant series have undefined correlation; "
            "treated as distance 1 to all others",
            stacklevel=2,
        )
    safe = np.where(const, 1.0, norms)
    z = centered / safe[:, None]
    corr = np.clip(z @ z.T, -1.0, 1.0)
    corr[const, :] = 0.0
    corr[:, const] = 0.0
    dist = 1.0 - corr
    np.fill_diagonal(dist, 0.0)
    return dist


def hierarchical_cluster(values: np.ndarray | TimeSeriesPanel, n_clusters: int | None = None) -> np.ndarray:
    """Average-linkage agglomerative clustering under correlation distance.

    Labels are renumbered in order of first appearance so the output does not
    depend on scipy's internal cluster numbering.
    """
    if isinstance(values, TimeSeriesPanel):
        values = values.values
    values = np.asarray(values, dtype=np.float64)
    n, t_len = values.shape
    if t_len < 3:
        raise DataError("clustering needs series of length >= 3")
    if n_clusters is None:
        n_clusters = default_n_clusters(n)
    if not 1 <= n_clusters <= n:
        raise ConfigError(f"n_clusters must be in [1, {n}], got {n_clusters}")
    dist = correlation_distance(values)
    dist = (dist + dist.T) / 2
    tree = linkage(squareform(dist, checks=False), method="average")
    raw = fcluster(tree, t=n_clusters, criterion="maxclust")
    remap: dict[int, int] = {}
    return np.array([remap.setdefault(c, len(remap)) for c in raw], dtype=np.int64)


def _rolling(x: np.ndarray, w: int) -> np.ndarray:
    """Windows ending at each t >= w-1, as a (T-w+1) x w view."""
    return sliding_window_view(x, w)


def moving_average(x: np.ndarray, w: int) -> np.ndarray:
    out = np.full(x.shape[0], np.nan)
    out[w - 1:] = _rolling(x, w).mean(axis=-1)
    return out


def rolling_moments(x: np.ndarray, w: int = STAT_WINDOW) -> dict[str, np.ndarray]:
    """Rolling mean, sample std, adjusted skewness, excess kurtosis, lag-1 ACF.

    Degenerate (zero-variance) windows report 0 for skew, kurtosis and ACF.
    """
    win = _rolling(x, w)
    mean = win.mean(axis=-1)
    dev = win - mean[:, None]
    m2 = (dev ** 2).mean(axis=-1)
    m3 = (dev ** 3).mean(axis=-1)
    m4 = (dev ** 4).mean(axis=-1)
    std = np.sqrt(m2 * w / (w - 1))
    flat = m2 <= 1e-14 * np.maximum(1.0, mean ** 2)
    safe = np.where(flat, 1.0, m2)
    g1 = m3 / safe ** 1.5
    g2 = m4 / safe ** 2 - 3.0
    skew = math.sqrt(w * (w - 1)) / (w - 2) * g1
    kurt = (w - 1) / ((w - 2) * (w - 3)) * ((w + 1) * g2 + 6.0)
    acf = (dev[:, 1:] * dev[:, :-1]).sum(axis=-1) / (safe * w)
    std = np.where(flat, 0.0, std)
    for arr in (skew, kurt, acf):
        arr[flat] = 0.0

    def pad(v: np.ndarray) -> np.ndarray:
        out = np.full(x.shape[0], np.nan)
        out[w - 1:] = v
        return out

    return {
        "roll_mean": pad(mean),
        "roll_std": pad(std),
        "roll_skew": pad(skew),
        "roll_kurt": pad(kurt),
        "roll_acf1": pad(acf),
    }


def rsi(close: np.ndarray, period: int = INDICATOR_PERIOD) -> np.ndarray:
    """Wilder's relative strength index; NaN until ``period`` changes are seen."""
    close = np.asarray(close, dtype=np.float64)
    out = np.full(close.size, np.nan)
    if close.size <= period:
        return out
    diff = np.diff(close)
    gain = np.clip(diff, 0.0, None)
    loss = np.clip(-diff, 0.0, None)
    avg_gain = gain[:period].mean()
    avg_loss = loss[:period].mean()
    for t in range(period, close.size):
        if t > period:
            avg_gain = (avg_gain * (period - 1) + gain[t - 1]) / period
            avg_loss = (avg_loss * (period - 1) + loss[t - 1]) / period
        if avg_loss == 0.0:
            out[t] = 100.0 if avg_gain > 0.0 else 50.0
        else:
            out[t] = 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    return out


def atr(high: np.ndarray, low: np.ndarray, close: np.ndarray, period: int = INDICATOR_PERIOD) -> np.ndarray:
    """Wilder's average true range."""
    high, low, close = (np.asarray(a, dtype=np.float64) for a in (high, low, close))
    tr = high - low
    prev = close[:-1]
    tr[1:] = np.maximum.reduce([tr[1:], np.abs(high[1:] - prev), np.abs(low[1:] - prev)])
    out = np.full(close.size, np.nan)
    if close.size < period:
        return out
    value = tr[:period].mean()
    out[period - 1] = value
    for t in range(period, close.size):
        value = (value * (period - 1) + tr[t]) / period
        out[t] = value
    return out


def obv(close: np.ndarray, volume: np.ndarray) -> np.ndarray:
    """On-balance volume starting at 0."""
    direction = np.sign(np.diff(np.asarray(close, dtype=np.float64)))
    return np.concatenate([[0.0], np.cumsum(direction * np.asarray(volume, dtype=np.float64)[1:])])


def series_features(
    x: np.ndarray,
    cluster: int = 0,
    ohlcv: dict[str, np.ndarray] | None = None,
) -> np.ndarray:
    """T x F feature matrix for one series (NaN before the warm-up)."""
    x = np.asarray(x, dtype=np.float64)
    cols = [moving_average(x, w) for w in MA_WINDOWS]
    moments = rolling_moments(x)
    cols += [moments[k] for k in ("roll_mean", "roll_std", "roll_skew", "roll_kurt", "roll_acf1")]
    cols.append(np.full(x.size, float(cluster)))
    if ohlcv is not None:
        cols.append(rsi(ohlcv["close"]))
        cols.append(atr(ohlcv["high"], ohlcv["low"], ohlcv["close"]))
        cols.append(obv(ohlcv["close"], ohlcv["volume"]))
    out = np.column_stack(cols)
    out[:WARMUP] = np.nan
    return out


def compute_features(panel: TimeSeriesPanel, clusters: np.ndarray | None = None) -> FeatureSet:
    """Engineered features for every entity; also stored on ``panel.features``."""
    n, t_len = panel.values.shape
    if t_len <= WARMUP:
        raise DataError(f"feature computation needs T > {WARMUP}, got {t_len}")
    if clusters is None:
        clusters = panel.cluster_id
    clusters = np.asarray(clusters, dtype=np.int64)
    names = BASE_FEATURES + (INDICATOR_FEATURES if panel.has_ohlcv else ())
    rows = []
    for i in range(n):
        ohlcv = {k: v[i] for k, v in panel.ohlcv.items()} if panel.has_ohlcv else None
        rows.append(series_features(panel.values[i], int(clusters[i]), ohlcv))
    fs = FeatureSet(names=names, values=np.stack(rows))
    panel.features = fs.values
    panel.cluster_id = clusters.copy()
    return fs
