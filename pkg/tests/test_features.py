import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tsrec.errors import DataError
from tsrec.features import (
    BASE_FEATURES,
    INDICATOR_FEATURES,
    WARMUP,
    compute_features,
    correlation_distance,
    hierarchical_cluster,
    moving_average,
    obv,
    rolling_moments,
    rsi,
    series_features,
)
from tsrec.panel import TimeSeriesPanel


def panel_of(values, ohlcv=None):
    values = np.asarray(values, dtype=float)
    n, t = values.shape
    return TimeSeriesPanel([f"e{i}" for i in range(n)], values, [str(d) for d in range(t)],
                           ohlcv=ohlcv or {})


def test_identical_series_same_cluster():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 50))
    x[1] = x[0]
    for k in range(2, 5):
        labels = hierarchical_cluster(x, k)
        assert labels[0] == labels[1]


def test_negation_is_distance_two_and_split_first():
    rng = np.random.default_rng(1)
    a = rng.normal(size=40)
    x = np.vstack([a, -a, a + 0.01 * rng.normal(size=40)])
    assert correlation_distance(x)[0, 1] == pytest.approx(2.0)
    labels = hierarchical_cluster(x, 2)
    assert labels[0] == labels[2] != labels[1]


def test_sinusoid_groups_recovered():
    rng = np.random.default_rng(2)
    t = np.arange(200)
    rows, truth = [], []
    for g, freq in enumerate((0.05, 0.11, 0.23)):
        for _ in range(6):
            rows.append(np.sin(2 * np.pi * freq * t) + 0.1 * rng.normal(size=t.size))
            truth.append(g)
    labels = hierarchical_cluster(np.array(rows), 3)
    truth = np.array(truth)
    # same partition: the labelling is a bijection of the planted groups
    assert len({(a, b) for a, b in zip(truth, labels)}) == 3


def test_constant_series_warns():
    x = np.vstack([np.ones(10), np.arange(10.0), np.arange(10.0) ** 2])
    with pytest.warns(UserWarning, match="constant"):
        d = correlation_distance(x)
    assert d[0, 1] == d[0, 2] == 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_cluster_partition_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(9, 30)).cumsum(axis=1)
    perm = rng.permutation(9)
    a = hierarchical_cluster(x, 3)
    b = hierarchical_cluster(x[perm], 3)
    part = lambda lab, idx: {frozenset(idx[lab == c]) for c in np.unique(lab)}  # noqa: E731
    assert part(a, np.arange(9)) == part(b, perm)


def test_ma_simple():
    assert moving_average(np.arange(1.0, 6.0), 5)[4] == 3.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=31, max_size=80), st.sampled_from([5, 10, 15, 30]))
def test_ma_equals_bruteforce(xs, w):
    x = np.array(xs)
    ma = moving_average(x, w)
    for t in range(w - 1, x.size):
        assert ma[t] == pytest.approx(np.mean(x[t - w + 1:t + 1]), rel=1e-12, abs=1e-9)


def test_rolling_moments_match_scipy():
    x = np.random.default_rng(3).normal(size=60)
    m = rolling_moments(x, 30)
    win = x[30:60]
    assert m["roll_std"][59] == pytest.approx(win.std(ddof=1))
    assert m["roll_skew"][59] == pytest.approx(stats.skew(win, bias=False))
    assert m["roll_kurt"][59] == pytest.approx(stats.kurtosis(win, bias=False))
    d = win - win.mean()
    assert m["roll_acf1"][59] == pytest.approx((d[1:] * d[:-1]).sum() / (d @ d))


def test_constant_series_features():
    x = np.full(40, 7.0)
    f = series_features(x, ohlcv={"high": x, "low": x, "close": x, "volume": np.ones(40)})
    names = BASE_FEATURES + INDICATOR_FEATURES
    row = dict(zip(names, f[-1]))
    for k in ("ma5", "ma10", "ma15", "ma30", "roll_mean"):
        assert row[k] == 7.0
    assert row["roll_std"] == 0.0
    assert np.all(f[WARMUP:, names.index("obv")] == 0.0)


def test_rsi_all_gains():
    out = rsi(np.arange(20.0), 14)
    assert out[14] == 100.0


def test_obv_direction():
    assert obv(np.array([1.0, 2.0, 1.0, 1.0]), np.array([5.0, 3.0, 4.0, 9.0])).tolist() == [0, 3, -1, -1]


def test_compute_features_shapes_and_warmup():
    x = np.random.default_rng(4).normal(size=(3, 60)).cumsum(axis=1)
    panel = panel_of(x)
    fs = compute_features(panel, np.array([0, 1, 1]))
    assert fs.names == BASE_FEATURES
    assert np.all(np.isnan(fs.values[:, :WARMUP]))
    assert np.all(np.isfinite(fs.truncated()))
    assert panel.features.shape == (3, 60, len(BASE_FEATURES))


def test_indicators_only_with_ohlcv():
    x = np.random.default_rng(5).normal(size=(2, 50)).cumsum(axis=1) + 100
    ohlcv = {"high": x + 1, "low": x - 1, "close": x, "volume": np.ones_like(x)}
    fs = compute_features(panel_of(x, ohlcv))
    assert fs.names[-3:] == INDICATOR_FEATURES
    assert np.all(np.isfinite(fs.truncated()))


def test_too_short_is_error():
    with pytest.raises(DataError, match="30"):
        compute_features(panel_of(np.zeros((2, 30))))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_shift_equivariance(seed, extra):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=120).cumsum()
    a = series_features(x[extra:])
    b = series_features(x)[extra:]
    np.testing.assert_allclose(a[WARMUP:], b[WARMUP:], rtol=1e-9, atol=1e-9)
