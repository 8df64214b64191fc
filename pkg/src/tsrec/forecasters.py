"""Candidate forecasting methods behind one fit/predict contract.

Every fitted model carries a Gaussian log-likelihood computed from its
one-step in-sample residuals, so information criteria are comparable across
method classes.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any

import numba
import numpy as np

from tsrec.errors import ConfigError, DataError
from tsrec.simplex import minimize_css
from tsrec.lstm import Adam, clip_by_global_norm, init_lstm, lstm_backward, lstm_forward
from tsrec.trees import GradientBoostedTrees, predict_tree

# ---------------------------------------------------------------------------
# method identifiers

_ORDERS = {
    "Naive": 0, "Mean": 0, "WhiteNoise": 0, "RWDrift": 0, "RWNoDrift": 0,
    "AR": 1, "MA": 1, "ARIMA": 3,
    "SES": 0, "Holt": 0, "DampedHolt": 0, "HoltWinters": 1,
    "GBTLags": 0, "RNNForecaster": 0,
}
_ID_RE = re.compile(r"^([A-Za-z]+)(?:\(([\d,\s]*)\))?$")


@dataclass(frozen=True, order=True)
class MethodId:
    name: str
    order: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.name not in _ORDERS:
            raise ConfigError(f"unknown forecasting method {self.name!r}")
        if len(self.order) != _ORDERS[self.name]:
            raise ConfigError(f"{self.name} takes {_ORDERS[self.name]} order arguments")
        if any(o < 0 for o in self.order):
            raise ConfigError("orders must be non-negative")
        if self.name == "HoltWinters" and self.order[0] < 2:
            raise ConfigError("HoltWinters seasonal period must be >= 2")

    def __str__(self) -> str:
        if not self.order:
            return self.name
        return f"{self.name}({','.join(map(str, self.order))})"

    @classmethod
    def parse(cls, text: str | MethodId) -> MethodId:
        if isinstance(text, MethodId):
            return text
        m = _ID_RE.match(text.strip())
        if not m:
            raise ConfigError(f"cannot parse method id {text!r}")
        order = tuple(int(x) for x in m.group(2).split(",")) if m.group(2) else ()
        return cls(m.group(1), order)

    @property
    def expensive(self) -> bool:
        """Learned models that are not refit on every fold (see labeler)."""
        return self.name in ("GBTLags", "RNNForecaster")


DEFAULT_METHODS: tuple[MethodId, ...] = tuple(
    MethodId.parse(s)
    for s in (
        "Naive", "Mean", "WhiteNoise", "AR(1)", "MA(1)", "RWDrift", "RWNoDrift",
        "ARIMA(2,1,2)", "SES", "Holt", "DampedHolt", "HoltWinters(7)",
        "GBTLags", "RNNForecaster",
    )
)

GBT_LAGS = 7
RNN_WINDOW = 8
TREND_INIT_BLOCK = 7


def min_length(method: MethodId) -> int:
    """Shortest training series accepted by ``fit``."""
    name, o = method.name, method.order
    if name in ("Naive", "Mean", "RWNoDrift"):
        return 1
    if name in ("WhiteNoise", "RWDrift", "SES"):
        return 2
    if name in ("Holt", "DampedHolt"):
        return 3
    if name == "AR":
        return o[0] + 3
    if name == "MA":
        return 2 * o[0] + 3
    if name == "ARIMA":
        p, d, q = o
        return d + p + q + 3
    if name == "HoltWinters":
        return 2 * o[0]
    if name == "GBTLags":
        return GBT_LAGS + 10
    return RNN_WINDOW + 10


def nominal_params(method: MethodId) -> int:
    """Parameter count d_q used for tie-breaking before any fit exists."""
    name, o = method.name, method.order
    table = {"Naive": 0, "RWNoDrift": 0, "Mean": 1, "WhiteNoise": 1, "RWDrift": 1,
             "SES": 1, "Holt": 2, "DampedHolt": 3, "HoltWinters": 3}
    if name in table:
        return table[name]
    if name in ("AR", "MA"):
        return o[0] + 1
    if name == "ARIMA":
        return o[0] + o[2] + (1 if o[1] == 0 else 0)
    if name == "GBTLags":
        return 100 * 2 ** 3
    return 4 * RNN_HIDDEN * (1 + RNN_HIDDEN + 1) + RNN_HIDDEN + 1


# ---------------------------------------------------------------------------
# fitted state


@dataclass
class FittedForecaster:
    """Fitted method state plus the quantities needed for AIC/BIC."""

    method: MethodId
    params: dict[str, Any]
    sigma2: float
    loglik: float
    n_params: int
    n: int
    converged: bool = True
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        def enc(v):
            if isinstance(v, np.ndarray):
                return {"__array__": v.tolist(), "shape": list(v.shape)}
            if isinstance(v, list):
                return [enc(x) for x in v]
            if isinstance(v, dict):
                return {k: enc(x) for k, x in v.items()}
            return v

        return json.dumps({
            "method": str(self.method), "params": enc(self.params), "sigma2": self.sigma2,
            "loglik": self.loglik, "n_params": self.n_params, "n": self.n,
            "converged": self.converged, "flags": self.flags,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> FittedForecaster:
        def dec(v):
            if isinstance(v, dict) and "__array__" in v:
                return np.array(v["__array__"], dtype=np.float64).reshape(v["shape"])
            if isinstance(v, dict):
                return {k: dec(x) for k, x in v.items()}
            if isinstance(v, list):
                return [dec(x) for x in v]
            return v

        d = json.loads(text)
        return cls(MethodId.parse(d["method"]), dec(d["params"]), d["sigma2"], d["loglik"],
                   d["n_params"], d["n"], d["converged"], d["flags"])


def gaussian_loglik(residuals: np.ndarray, n: int) -> tuple[float, float]:
    """(sigma2, loglik) with loglik = -n/2 (ln(2 pi sigma2) + 1)."""
    residuals = np.asarray(residuals, dtype=np.float64)
    sigma2 = float(np.mean(residuals ** 2)) if residuals.size else 0.0
    if sigma2 <= 0.0:
        return 0.0, math.inf
    return sigma2, -0.5 * n * (math.log(2 * math.pi * sigma2) + 1.0)


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _arma_css(w, phi, theta):
    """Conditional residuals of a zero-mean ARMA; returns (residuals, sse)."""
    n = w.size
    p, q = phi.size, theta.size
    e = np.zeros(n)
    sse = 0.0
    for t in range(p, n):
        pred = 0.0
        for i in range(p):
            pred += phi[i] * w[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= 0:
                pred += theta[j] * e[t - 1 - j]
        e[t] = w[t] - pred
        sse += e[t] * e[t]
        if not np.isfinite(sse):
            return e, np.inf
    return e, sse


@numba.njit(cache=True)
def _ets_init(y, trend, m):
    """Initial (level, trend, seasonals, first filtered index).

    Seasonal: level is the first season's mean, slope the change between the
    first two season means.  Non-seasonal: level y0; the slope uses the same
    two-block rule with blocks of TREND_INIT_BLOCK points (shorter for short
    series) so one noisy difference does not set the trend.
    """
    season = np.zeros(max(m, 1))
    if m > 0:
        l = 0.0
        for i in range(m):
            l += y[i]
        l /= m
        l2 = 0.0
        for i in range(m, 2 * m):
            l2 += y[i]
        l2 /= m
        for i in range(m):
            season[i] = y[i] - l
        return l, (l2 - l) / m, season, 0
    b = 0.0
    if trend > 0:
        k = min(TREND_INIT_BLOCK, y.size // 2)
        s1 = 0.0
        s2 = 0.0
        for i in range(k):
            s1 += y[i]
            s2 += y[k + i]
        b = (s2 - s1) / (k * k)
    return y[0], b, season, 1


@numba.njit(cache=True)
def _ets_filter(y, alpha, beta, gamma, phi, trend, m):
    """One pass of additive ETS.

    trend: 0 none, 1 additive, 2 damped.  m = 0 disables seasonality.
    Returns (sse, level, trend, seasonals, one-step residuals).
    """
    n = y.size
    l, b, season, start = _ets_init(y, trend, m)
    damp = phi if trend == 2 else 1.0
    resid = np.zeros(n - start)
    sse = 0.0
    for t in range(start, n):
        s = season[t % m] if m > 0 else 0.0
        err = y[t] - (l + damp * b + s)
        resid[t - start] = err
        sse += err * err
        l_prev = l
        b_prev = b
        l = alpha * (y[t] - s) + (1.0 - alpha) * (l_prev + damp * b_prev)
        if trend > 0:
            b = beta * (l - l_prev) + (1.0 - beta) * damp * b_prev
        if m > 0:
            season[t % m] = gamma * (y[t] - l_prev - damp * b_prev) + (1.0 - gamma) * s
    return sse, l, b, season, resid


@numba.njit(cache=True)
def _ets_grid(y, alphas, betas, gammas, phis, trend, m):
    """Exhaustive search; first minimum in (alpha, beta, gamma, phi) order wins."""
    best = np.inf
    best_idx = np.zeros(4, dtype=np.int64)
    for a in range(alphas.size):
        for b in range(betas.size):
            for g in range(gammas.size):
                for f in range(phis.size):
                    sse = _ets_filter(y, alphas[a], betas[b], gammas[g], phis[f], trend, m)[0]
                    if sse < best:
                        best = sse
                        best_idx[0] = a
                        best_idx[1] = b
                        best_idx[2] = g
                        best_idx[3] = f
    return best, best_idx


@numba.njit(cache=True)
def _ets_prefix_sse(y, alpha, beta, gamma, phi, trend, m, ends, out):
    """Cumulative SSE of the one-step errors at each prefix length in ``ends``.

    Equivalent to running the filter separately on y[:e] for every e.
    """
    n = ends[-1]
    l, b, season, start = _ets_init(y, trend, m)
    damp = phi if trend == 2 else 1.0
    sse = 0.0
    k = 0
    for t in range(start, n):
        s = season[t % m] if m > 0 else 0.0
        err = y[t] - (l + damp * b + s)
        sse += err * err
        while k < ends.size and ends[k] == t + 1:
            out[k] = sse
            k += 1
        l_prev = l
        b_prev = b
        l = alpha * (y[t] - s) + (1.0 - alpha) * (l_prev + damp * b_prev)
        if trend > 0:
            b = beta * (l - l_prev) + (1.0 - beta) * damp * b_prev
        if m > 0:
            season[t % m] = gamma * (y[t] - l_prev - damp * b_prev) + (1.0 - gamma) * s


@numba.njit(cache=True)
def _ets_grid_prefix(y, alphas, betas, gammas, phis, trend, m, ends):
    n_end = ends.size
    best = np.full(n_end, np.inf)
    best_idx = np.zeros((n_end, 4), dtype=np.int64)
    buf = np.zeros(n_end)
    for a in range(alphas.size):
        for b in range(betas.size):
            for g in range(gammas.size):
                for f in range(phis.size):
                    _ets_prefix_sse(y, alphas[a], betas[b], gammas[g], phis[f], trend, m, ends, buf)
                    for k in range(n_end):
                        if buf[k] < best[k]:
                            best[k] = buf[k]
                            best_idx[k, 0] = a
                            best_idx[k, 1] = b
                            best_idx[k, 2] = g
                            best_idx[k, 3] = f
    return best, best_idx


# ---------------------------------------------------------------------------
# ETS grid search

ALPHA_RANGE = (0.0, 1.0)
PHI_RANGE = (0.8, 0.98)
COARSE_STEP = 0.05
FINE_STEP = 0.01


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    k = int(math.floor((hi - lo) / step + 1e-9))
    pts = np.round(lo + step * np.arange(k + 1), 10)
    if hi - pts[-1] > 1e-9:
        pts = np.append(pts, hi)
    return pts


def _fine(center: float, lo: float, hi: float) -> np.ndarray:
    pts = np.round(center + FINE_STEP * np.arange(-5, 6), 10)
    return pts[(pts >= lo - 1e-12) & (pts <= hi + 1e-12)]


def ets_spec(method: MethodId) -> tuple[int, int, bool, bool]:
    """(trend, season period, uses beta, uses gamma) for an ETS method."""
    if method.name == "SES":
        return 0, 0, False, False
    if method.name == "Holt":
        return 1, 0, True, False
    if method.name == "DampedHolt":
        return 2, 0, True, False
    return 1, method.order[0], True, True


def ets_grid_search(y: np.ndarray, method: MethodId) -> tuple[np.ndarray, float]:
    """Coarse 0.05 grid, then one 0.01 refinement around the best cell.

    Returns the best (alpha, beta, gamma, phi) and its sum of squared one-step errors.
    """
    trend, m, use_b, use_g = ets_spec(method)
    zero = np.zeros(1)
    a_grid = _grid(*ALPHA_RANGE, COARSE_STEP)
    b_grid = a_grid if use_b else zero
    g_grid = a_grid if use_g else zero
    f_grid = _grid(*PHI_RANGE, COARSE_STEP) if trend == 2 else np.ones(1)
    sse, idx = _ets_grid(y, a_grid, b_grid, g_grid, f_grid, trend, m)
    coarse = (a_grid[idx[0]], b_grid[idx[1]], g_grid[idx[2]], f_grid[idx[3]])
    a2 = _fine(coarse[0], *ALPHA_RANGE)
    b2 = _fine(coarse[1], *ALPHA_RANGE) if use_b else zero
    g2 = _fine(coarse[2], *ALPHA_RANGE) if use_g else zero
    f2 = _fine(coarse[3], *PHI_RANGE) if trend == 2 else np.ones(1)
    sse2, idx2 = _ets_grid(y, a2, b2, g2, f2, trend, m)
    if sse2 < sse:
        return np.array([a2[idx2[0]], b2[idx2[1]], g2[idx2[2]], f2[idx2[3]]]), float(sse2)
    return np.array(coarse), float(sse)


def ets_grid_search_prefixes(y: np.ndarray, method: MethodId, ends) -> list[tuple[np.ndarray, float]]:
    """``ets_grid_search`` applied to every prefix y[:e], sharing filter passes."""
    trend, m, use_b, use_g = ets_spec(method)
    ends = np.asarray(ends, dtype=np.int64)
    if ends.size == 0:
        return []
    if np.any(np.diff(ends) <= 0):
        raise ConfigError("prefix ends must be strictly increasing")
    y = np.asarray(y[:ends[-1]], dtype=np.float64)
    zero = np.zeros(1)
    a_grid = _grid(*ALPHA_RANGE, COARSE_STEP)
    b_grid = a_grid if use_b else zero
    g_grid = a_grid if use_g else zero
    f_grid = _grid(*PHI_RANGE, COARSE_STEP) if trend == 2 else np.ones(1)
    sse, idx = _ets_grid_prefix(y, a_grid, b_grid, g_grid, f_grid, trend, m, ends)
    out: list[tuple[np.ndarray, float] | None] = [None] * ends.size
    cells: dict[tuple, list[int]] = {}
    for k in range(ends.size):
        cell = (a_grid[idx[k, 0]], b_grid[idx[k, 1]], g_grid[idx[k, 2]], f_grid[idx[k, 3]])
        cells.setdefault(cell, []).append(k)
    for cell, ks in cells.items():
        a2 = _fine(cell[0], *ALPHA_RANGE)
        b2 = _fine(cell[1], *ALPHA_RANGE) if use_b else zero
        g2 = _fine(cell[2], *ALPHA_RANGE) if use_g else zero
        f2 = _fine(cell[3], *PHI_RANGE) if trend == 2 else np.ones(1)
        sub = ends[ks]
        sse2, idx2 = _ets_grid_prefix(y[:sub[-1]], a2, b2, g2, f2, trend, m, sub)
        for j, k in enumerate(ks):
            if sse2[j] < sse[k]:
                fine = np.array([a2[idx2[j, 0]], b2[idx2[j, 1]], g2[idx2[j, 2]], f2[idx2[j, 3]]])
                out[k] = (fine, float(sse2[j]))
            else:
                out[k] = (np.array(cell), float(sse[k]))
    return out


def ets_sse(y: np.ndarray, method: MethodId, params: np.ndarray) -> float:
    trend, m, _, _ = ets_spec(method)
    return float(_ets_filter(np.asarray(y, dtype=np.float64), *map(float, params), trend, m)[0])


# ---------------------------------------------------------------------------
# fitting


def _check_series(method: MethodId, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise DataError("training series must be one-dimensional")
    if not np.all(np.isfinite(y)):
        raise DataError(f"{method}: training series contains non-finite values")
    need = min_length(method)
    if y.size < need:
        raise DataError(f"{method}: training series of length {y.size} is shorter than {need}")
    return y


def fit(method: MethodId | str, train, seed: int = 0) -> FittedForecaster:
    """Fit ``method`` to ``train``; stochastic fits are deterministic under ``seed``."""
    method = MethodId.parse(method)
    y = _check_series(method, train)
    n = y.size
    name = method.name

    if name in ("Naive", "RWNoDrift"):
        return _finish(method, {"last": y[-1]}, np.diff(y), 0, n)
    if name == "Mean":
        level = float(np.mean(y))
        return _finish(method, {"level": level}, y - level, 1, n)
    if name == "RWDrift":
        drift = float((y[-1] - y[0]) / (n - 1))
        return _finish(method, {"last": y[-1], "drift": drift}, np.diff(y) - drift, 1, n)
    if name == "AR":
        return _fit_ar(method, y, method.order[0])
    if name == "WhiteNoise":
        return _fit_arima(method, y, 0, 0, 0)
    if name == "MA":
        return _fit_arima(method, y, 0, 0, method.order[0])
    if name == "ARIMA":
        return _fit_arima(method, y, *method.order)
    if name in ("SES", "Holt", "DampedHolt", "HoltWinters"):
        return _fit_ets(method, y)
    if name == "GBTLags":
        return _fit_gbt(method, y)
    return _fit_rnn(method, y, seed)


def fit_expanding(method: MethodId | str, train, ends, seed: int = 0) -> list[FittedForecaster]:
    """Fit ``method`` on each prefix ``train[:e]``; identical to calling ``fit`` per prefix."""
    method = MethodId.parse(method)
    y = np.asarray(train, dtype=np.float64)
    ends = [int(e) for e in ends]
    for e in ends:
        _check_series(method, y[:e])
    if method.name in ("SES", "Holt", "DampedHolt", "HoltWinters"):
        searched = ets_grid_search_prefixes(y, method, ends)
        return [_ets_fitted(method, y[:e], params) for e, (params, _) in zip(ends, searched)]
    return [fit(method, y[:e], seed) for e in ends]


def _finish(method, params, residuals, n_params, n, converged=True, flags=None) -> FittedForecaster:
    sigma2, loglik = gaussian_loglik(residuals, n)
    flags = list(flags or [])
    if sigma2 == 0.0:
        flags.append("perfect_fit")
    return FittedForecaster(method, params, sigma2, loglik, n_params, n, converged, flags)


def lag_matrix(y: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Design [1, y_{t-1}, ..., y_{t-p}] and target y_t for t = p..n-1."""
    n = y.size
    X = np.ones((n - p, p + 1))
    for k in range(1, p + 1):
        X[:, k] = y[p - k:n - k]
    return X, y[p:]


def _fit_ar(method, y, p):
    X, target = lag_matrix(y, p)
    coef, *_ = np.linalg.lstsq(X, target, rcond=None)
    # one-step residuals from t=1 for every order, so likelihoods of different
    # orders cover the same points; pre-sample lags take the process mean
    c, phi = coef[0], coef[1:]
    denom = 1.0 - phi.sum()
    mu = c / denom if abs(denom) > 1e-8 else y[0]
    ext = np.concatenate([np.full(p, mu), y])
    pred = np.full(y.size - 1, c)
    for k in range(p):
        pred += phi[k] * ext[p - k:p - k + y.size - 1]
    resid = y[1:] - pred
    return _finish(method, {"coef": coef, "tail": y[-p:].copy() if p else np.zeros(0)}, resid, p + 1, y.size)


MAX_SIMPLEX_ITER = 500
SIMPLEX_TOL = 1e-8
SIMPLEX_STEP = 0.1


def _fit_arima(method, y, p, d, q):
    w = np.diff(y, n=d) if d else y.copy()
    mu = float(np.mean(w)) if d == 0 else 0.0
    wc = w - mu
    converged = True
    k = p + q
    if k:
        x, _, converged, _ = minimize_css(np.zeros(k), SIMPLEX_STEP, wc, p,
                                          MAX_SIMPLEX_ITER, SIMPLEX_TOL, 1e-10)
        converged = bool(converged)
    else:
        x = np.zeros(0)
    phi, theta = x[:p].copy(), x[p:].copy()
    resid, _ = _arma_css(wc, phi, theta)
    # tails needed to continue the recursions and undo differencing
    levels = [y]
    for _ in range(d):
        levels.append(np.diff(levels[-1]))
    params = {
        "phi": phi, "theta": theta, "mu": mu, "d": d,
        "w_tail": wc[-p:].copy() if p else np.zeros(0),
        "e_tail": resid[-q:].copy() if q else np.zeros(0),
        "last_levels": np.array([lv[-1] for lv in levels[:d]]),
    }
    n_params = p + q + (1 if d == 0 else 0)
    flags = [] if converged else ["simplex_not_converged"]
    return _finish(method, params, resid[p:], n_params, y.size, converged, flags)


def _fit_ets(method, y):
    params, _ = ets_grid_search(y, method)
    return _ets_fitted(method, y, params)


def _ets_fitted(method, y, params):
    trend, m, use_b, use_g = ets_spec(method)
    _, level, slope, season, resid = _ets_filter(y, *map(float, params), trend, m)
    n_params = 1 + int(use_b) + int(use_g) + int(trend == 2)
    state = {"smoothing": params, "level": float(level), "trend": float(slope),
             "season": season.copy(), "n": y.size}
    return _finish(method, state, resid, n_params, y.size)


def _fit_gbt(method, y):
    X, target = lag_matrix(y, GBT_LAGS)
    X = X[:, 1:]
    model = GradientBoostedTrees(n_trees=100, learning_rate=0.1, max_depth=3).fit(X, target)
    resid = target - model.predict(X)
    params = {"init": model.init_, "learning_rate": model.learning_rate,
              "trees": list(model.trees_), "tail": y[-GBT_LAGS:].copy()}
    return _finish(method, params, resid, model.n_leaves, y.size)


RNN_HIDDEN = 32
RNN_EPOCHS = 30
RNN_LR = 0.01


def _rnn_windows(z: np.ndarray, w: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(w)[None, :] + np.arange(z.size - w)[:, None]
    return z[idx][:, :, None], z[w:]


def _rnn_head(h, p):
    return h @ p["Wy"] + p["by"]


def _fit_rnn(method, y, seed):
    rng = np.random.default_rng(seed)
    center = float(np.mean(y))
    scale = float(np.std(y))
    flags = []
    if scale == 0.0:
        flags.append("constant_series")
    z = (y - center) / (scale if scale > 0 else 1.0)
    X, target = _rnn_windows(z, RNN_WINDOW)
    last = X[:, -1, 0]
    p = init_lstm(1, RNN_HIDDEN, rng)
    p["Wy"] = rng.uniform(-0.1, 0.1, size=RNN_HIDDEN)
    p["by"] = np.zeros(1)
    opt = Adam(p, RNN_LR)
    for _ in range(RNN_EPOCHS):
        h, cache = lstm_forward(X, p)
        pred = last + _rnn_head(h, p)
        err = pred - target
        g_out = 2.0 * err / err.size
        grads = lstm_backward(np.outer(g_out, p["Wy"]), cache, p)
        grads["Wy"] = h.T @ g_out
        grads["by"] = np.array([g_out.sum()])
        clip_by_global_norm(grads, 5.0)
        opt.step(p, grads)
    h, _ = lstm_forward(X, p)
    fitted = last + _rnn_head(h, p)
    resid = (target - fitted) * scale
    params = {k: v.copy() for k, v in p.items()}
    params.update({"center": center, "scale": scale, "tail": y[-RNN_WINDOW:].copy()})
    n_params = sum(v.size for k, v in p.items())
    return _finish(method, params, resid, n_params, y.size, flags=flags)


def roll_forward(model: FittedForecaster, history) -> FittedForecaster:
    """Condition a fitted learned model on a longer history without re-estimating it."""
    history = np.asarray(history, dtype=np.float64)
    if model.method.name == "GBTLags":
        tail = history[-GBT_LAGS:]
    elif model.method.name == "RNNForecaster":
        tail = history[-RNN_WINDOW:]
    else:
        raise ConfigError(f"{model.method} is refit, not rolled forward")
    params = dict(model.params)
    params["tail"] = tail.copy()
    return FittedForecaster(model.method, params, model.sigma2, model.loglik, model.n_params,
                            model.n, model.converged, list(model.flags))


# ---------------------------------------------------------------------------
# prediction


def predict(model: FittedForecaster, h: int = 1) -> np.ndarray:
    """h-step-ahead point forecasts."""
    if h < 1:
        raise ConfigError("horizon must be >= 1")
    name, p = model.method.name, model.params
    steps = np.arange(1, h + 1, dtype=np.float64)
    if name in ("Naive", "RWNoDrift"):
        return np.full(h, float(p["last"]))
    if name == "Mean":
        return np.full(h, float(p["level"]))
    if name == "RWDrift":
        return p["last"] + steps * p["drift"]
    if name == "AR":
        coef = p["coef"]
        hist = list(p["tail"])
        out = []
        for _ in range(h):
            val = coef[0] + sum(coef[k] * hist[-k] for k in range(1, coef.size))
            out.append(val)
            hist.append(val)
        return np.array(out)
    if name in ("WhiteNoise", "MA", "ARIMA"):
        return _predict_arima(p, h)
    if name in ("SES", "Holt", "DampedHolt", "HoltWinters"):
        return _predict_ets(model.method, p, h)
    if name == "GBTLags":
        hist = list(p["tail"])
        out = []
        for _ in range(h):
            x = np.array(hist[::-1][:GBT_LAGS])[None, :]
            val = p["init"] + sum(p["learning_rate"] * predict_tree(t, x)[0] for t in p["trees"])
            out.append(float(val))
            hist.append(float(val))
        return np.array(out)
    return _predict_rnn(p, h)


def _predict_arima(p, h):
    phi, theta = p["phi"], p["theta"]
    w = list(p["w_tail"])
    e = list(p["e_tail"])
    fc = []
    for step in range(h):
        val = sum(phi[i] * w[-1 - i] for i in range(phi.size))
        val += sum(theta[j] * e[-1 - j] for j in range(theta.size) if j < len(e))
        fc.append(val)
        w.append(val)
        e.append(0.0)
    out = np.array(fc) + p["mu"]
    # undo differencing from the innermost level outward
    for last in p["last_levels"][::-1]:
        out = last + np.cumsum(out)
    return out


def _predict_ets(method, p, h):
    alpha, beta, gamma, phi = p["smoothing"]
    trend, m, _, _ = ets_spec(method)
    level, slope = p["level"], p["trend"]
    steps = np.arange(1, h + 1)
    if trend == 2:
        mult = np.cumsum(phi ** steps)
    elif trend == 1:
        mult = steps.astype(np.float64)
    else:
        mult = np.zeros(h)
    out = level + mult * slope
    if m:
        n = int(p["n"])
        out = out + np.array([p["season"][(n + k - 1) % m] for k in steps])
    return out


def _predict_rnn(p, h):
    scale = p["scale"]
    if scale == 0.0:
        return np.full(h, float(p["tail"][-1]))
    hist = list((np.asarray(p["tail"]) - p["center"]) / scale)
    out = []
    for _ in range(h):
        x = np.array(hist[-RNN_WINDOW:])[None, :, None]
        hid, _ = lstm_forward(x, p)
        val = hist[-1] + float(_rnn_head(hid, p)[0])
        out.append(val)
        hist.append(val)
    return np.array(out) * scale + p["center"]


# ---------------------------------------------------------------------------
# information criteria


def information_criterion(model: FittedForecaster, kind: str = "AIC") -> float:
    """AIC = -2 loglik + 2 d; BIC = -2 loglik + d ln n.  Perfect fits return -inf."""
    kind = kind.upper()
    if kind not in ("AIC", "BIC"):
        raise ConfigError(f"unknown information criterion {kind!r}")
    if model.sigma2 == 0.0 or math.isinf(model.loglik):
        return -math.inf
    penalty = 2.0 * model.n_params if kind == "AIC" else model.n_params * math.log(model.n)
    return -2.0 * model.loglik + penalty


def ic_from_loglik(loglik: float, n_params: int, n: float, kind: str = "AIC") -> float:
    penalty = 2.0 * n_params if kind.upper() == "AIC" else n_params * math.log(n)
    return -2.0 * loglik + penalty
