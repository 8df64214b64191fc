import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from tsrec.errors import ConfigError, DataError
from tsrec.forecasters import (
    ALPHA_RANGE,
    COARSE_STEP,
    DEFAULT_METHODS,
    PHI_RANGE,
    FittedForecaster,
    MethodId,
    ets_grid_search,
    ets_grid_search_prefixes,
    ets_spec,
    ets_sse,
    fit,
    fit_expanding,
    gaussian_loglik,
    ic_from_loglik,
    information_criterion,
    lag_matrix,
    min_length,
    predict,
)


def ar1(phi, n, noise=1.0, seed=0, burn=100):
    rng = np.random.default_rng(seed)
    eps = noise * rng.normal(size=n + burn)
    y = np.zeros(n + burn)
    for t in range(1, n + burn):
        y[t] = phi * y[t - 1] + eps[t]
    return y[burn:]


def test_naive_stores_last_value():
    m = fit("Naive", [3.0, 1.0, 5.0])
    assert m.params["last"] == 5.0 and m.n_params == 0
    assert predict(m, 3).tolist() == [5.0, 5.0, 5.0]


def test_mean_level():
    assert fit("Mean", [1.0, 2.0, 3.0]).params["level"] == 2.0


def test_rwdrift_on_line():
    assert predict(fit("RWDrift", np.arange(1.0, 11.0)), 1)[0] == pytest.approx(11.0)


def test_ses_alpha_one_is_naive():
    y = np.random.default_rng(0).normal(size=40).cumsum()
    from tsrec.forecasters import _ets_fitted

    m = _ets_fitted(MethodId("SES"), y, np.array([1.0, 0.0, 0.0, 1.0]))
    assert predict(m, 1)[0] == pytest.approx(y[-1])


def test_ar1_coefficient_matches_ols_oracle():
    y = ar1(0.8, 500, noise=0.1, seed=4)
    m = fit("AR(1)", y)
    # closed-form OLS on the lag regression, written independently
    x, t = y[:-1], y[1:]
    xm, tm = x.mean(), t.mean()
    slope = ((x - xm) * (t - tm)).sum() / ((x - xm) ** 2).sum()
    assert m.params["coef"][1] == pytest.approx(slope, rel=1e-9)
    assert abs(slope - 0.8) < 0.05


def test_lag_matrix_layout():
    X, t = lag_matrix(np.arange(5.0), 2)
    assert X.tolist() == [[1, 1, 0], [1, 2, 1], [1, 3, 2]]
    assert t.tolist() == [2, 3, 4]


def test_ic_formulas():
    assert ic_from_loglik(-100.0, 3, 100, "AIC") == pytest.approx(206.0)
    assert ic_from_loglik(-100.0, 3, math.e ** 2, "BIC") == pytest.approx(206.0)


def test_information_criterion_uses_fit():
    m = fit("AR(1)", ar1(0.5, 200, seed=1))
    assert information_criterion(m, "AIC") == pytest.approx(-2 * m.loglik + 2 * m.n_params)
    assert information_criterion(m, "BIC") == pytest.approx(-2 * m.loglik + m.n_params * math.log(m.n))
    with pytest.raises(ConfigError):
        information_criterion(m, "HQ")


def test_perfect_fit_sentinel():
    m = fit("Naive", np.full(10, 4.0))
    assert "perfect_fit" in m.flags
    assert information_criterion(m) == -math.inf


def test_gaussian_loglik_value():
    r = np.array([1.0, -1.0, 2.0, -2.0])
    s2, ll = gaussian_loglik(r, 4)
    assert s2 == 2.5
    assert ll == pytest.approx(-2 * (math.log(2 * math.pi * 2.5) + 1))


def test_aic_prefers_smaller_nested_ar_on_white_noise():
    # the extra five lags are pure noise; the likelihood-ratio statistic is
    # chi2 with 5 dof, so AIC keeps the small model with probability ~0.925
    assert chi2.cdf(10.0, 5) > 0.9
    wins = 0
    for seed in range(100):
        y = np.random.default_rng(seed).normal(size=1000)
        small = information_criterion(fit("AR(1)", y))
        big = information_criterion(fit("AR(6)", y))
        wins += small < big
    assert wins >= 90


@pytest.mark.parametrize("method", DEFAULT_METHODS, ids=str)
def test_constant_series_forecast_is_constant(method):
    y = np.full(40, 3.5)
    assert predict(fit(method, y, seed=0), 1)[0] == pytest.approx(3.5, abs=1e-8)


def test_white_noise_equals_mean():
    y = np.random.default_rng(2).normal(5.0, 1.0, size=60)
    a = predict(fit("ARIMA(0,0,0)", y), 1)[0]
    b = predict(fit("Mean", y), 1)[0]
    assert a == pytest.approx(b, rel=1e-12)


@pytest.mark.parametrize("name", ["SES", "Holt", "DampedHolt", "HoltWinters(7)"])
def test_ets_grid_result_beats_every_grid_point(name):
    method = MethodId.parse(name)
    t = np.arange(70)
    y = 0.3 * t + 2 * np.sin(2 * np.pi * t / 7) + np.random.default_rng(5).normal(size=70)
    best, sse = ets_grid_search(y, method)
    assert ets_sse(y, method, best) == pytest.approx(sse)
    trend, _, use_b, use_g = ets_spec(method)
    grid = np.round(np.arange(ALPHA_RANGE[0], ALPHA_RANGE[1] + 1e-9, COARSE_STEP), 10)
    phis = np.round(np.arange(PHI_RANGE[0], PHI_RANGE[1] + 1e-9, COARSE_STEP), 10)
    for a, b, g, f in itertools.product(grid, grid if use_b else [0.0], grid if use_g else [0.0],
                                        phis if trend == 2 else [1.0]):
        assert sse <= ets_sse(y, method, np.array([a, b, g, f])) + 1e-9


@pytest.mark.parametrize("name", ["SES", "DampedHolt", "HoltWinters(7)"])
def test_prefix_search_equals_independent_searches(name):
    method = MethodId.parse(name)
    y = np.random.default_rng(6).normal(size=90).cumsum()
    ends = [40, 55, 90]
    shared = ets_grid_search_prefixes(y, method, ends)
    for e, (params, sse) in zip(ends, shared):
        p2, s2 = ets_grid_search(y[:e], method)
        assert sse == pytest.approx(s2)
        assert np.allclose(params, p2)


def test_fit_expanding_matches_fit():
    y = np.random.default_rng(7).normal(size=80).cumsum()
    for name in ("Holt", "AR(1)"):
        many = fit_expanding(name, y, [30, 50, 80])
        for e, m in zip([30, 50, 80], many):
            assert np.allclose(predict(m, 3), predict(fit(name, y[:e]), 3))


@pytest.mark.parametrize("name", ["GBTLags", "RNNForecaster", "ARIMA(2,1,2)", "MA(1)"])
def test_fit_bit_stable(name):
    y = np.random.default_rng(8).normal(size=60).cumsum()
    a, b = fit(name, y, seed=3), fit(name, y, seed=3)
    assert a.to_json() == b.to_json()
    assert predict(a, 4).tobytes() == predict(b, 4).tobytes()


def test_json_roundtrip():
    m = fit("HoltWinters(7)", np.random.default_rng(9).normal(size=50))
    m2 = FittedForecaster.from_json(m.to_json())
    assert np.array_equal(predict(m, 7), predict(m2, 7))


def test_errors():
    with pytest.raises(DataError):
        fit("AR(3)", np.zeros(min_length(MethodId.parse("AR(3)")) - 1))
    with pytest.raises(DataError):
        fit("Naive", [1.0, np.nan])
    with pytest.raises(ConfigError):
        MethodId.parse("Prophet")
    with pytest.raises(ConfigError):
        predict(fit("Naive", [1.0]), 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=20, max_size=60))
def test_forecasts_finite(xs):
    y = np.array(xs)
    for name in ("Naive", "Mean", "AR(1)", "SES", "Holt", "ARIMA(2,1,2)"):
        assert np.all(np.isfinite(predict(fit(name, y), 3)))
