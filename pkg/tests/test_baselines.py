import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsrec.baselines import (
    META_FEATURES,
    MetaLearner,
    meta_features,
    meta_matrix,
    read_recommendations,
    recommend_aic,
    recommend_cv,
    recommend_meta,
    recommend_random,
    select_by_ic,
    write_recommendations,
)
from tsrec.errors import ConfigError, DataError
from tsrec.forecasters import MethodId
from tsrec.labeler import LabelTable, make_folds


def ar1_series(seed, phi=0.6, n=200, burn=100):
    eps = np.random.default_rng(seed).normal(size=n + burn)
    y = np.zeros(n + burn)
    for t in range(1, n + burn):
        y[t] = phi * y[t - 1] + eps[t]
    return y[burn:]


def test_random_modal_label():
    labels = ["Naive"] * 6 + ["Mean"] * 3 + ["SES"]
    assert recommend_random(labels) == MethodId("Naive")


def test_random_tie_prefers_fewer_parameters():
    assert recommend_random(["Holt", "Naive", "Holt", "Naive"]) == MethodId("Naive")
    assert recommend_random(["SES", "Mean"]) == MethodId("Mean")  # equal d_q, then name
    with pytest.raises(DataError):
        recommend_random([])


def test_random_accuracy_is_modal_frequency():
    train = ["Naive"] * 7 + ["Mean"] * 3
    test = ["Naive", "Mean", "Naive", "SES"]
    rec = recommend_random(train)
    assert np.mean([rec == MethodId.parse(t) for t in test]) == test.count("Naive") / len(test)


def score_table(fold_scores, methods):
    n, m, k = fold_scores.shape
    plan = make_folds(k + 5, k, 1)
    return LabelTable([f"e{i}" for i in range(n)], [MethodId.parse(x) for x in methods], "SMAPE",
                      fold_scores, np.zeros((n, m, k, 1)), np.zeros((n, k, 1)), plan,
                      tuple(range(k)))


def test_cv_single_dominant_method():
    fs = np.ones((3, 2, 1))
    fs[:, 1] = 0.1
    recs = recommend_cv(score_table(fs, ["Mean", "SES"]), [0])
    assert set(recs.values()) == {MethodId("SES")}


def test_cv_train_folds_match_all_folds_when_constant():
    rng = np.random.default_rng(0)
    per_method = rng.random((4, 3))
    fs = np.repeat(per_method[:, :, None], 6, axis=2)
    table = score_table(fs, ["Mean", "Naive", "SES"])
    assert recommend_cv(table, [0, 1, 2]) == dict(zip(table.entities, table.best_over(range(6))))
    assert list(recommend_cv(table, [0], ["e2"])) == ["e2"]
    with pytest.raises(ConfigError):
        recommend_cv(table, [])


def test_aic_constant_series_tie_goes_to_naive():
    assert select_by_ic(np.full(30, 2.0), ["Mean", "Naive"]).method == MethodId("Naive")


def test_aic_recovers_ar1():
    hits = sum(select_by_ic(ar1_series(s), ["Mean", "AR(1)", "AR(3)"]).method == MethodId.parse("AR(1)")
               for s in range(100))
    assert hits >= 80


def test_aic_invariant_to_method_order():
    values = np.stack([ar1_series(s, n=120) for s in range(5)])
    ents = [f"e{i}" for i in range(5)]
    ms = ["Mean", "AR(1)", "AR(3)", "SES", "Naive"]
    assert recommend_aic(values, ents, ms) == recommend_aic(values, ents, ms[::-1])
    assert recommend_aic(values, ents, ms, end=80) == recommend_aic(values[:, :80], ents, ms)


def test_meta_features_pure_and_named():
    x = np.random.default_rng(1).normal(size=100).cumsum()
    a, b = meta_features(x), meta_features(x.copy())
    assert len(META_FEATURES) == 11 == a.values.size
    assert np.array_equal(a.values, b.values) and not a.degenerate
    assert a.values[0] == 100


def test_meta_features_flat_series_degenerate():
    v = meta_features(np.full(50, 3.0))
    assert v.degenerate and np.all(np.isfinite(v.values))
    with pytest.raises(DataError):
        meta_features([1.0, 2.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=80))
def test_meta_features_always_finite(xs):
    assert np.all(np.isfinite(meta_features(np.array(xs)).values))


def test_meta_duplicate_point_dominant_label():
    rng = np.random.default_rng(2)
    X = np.vstack([np.tile(rng.normal(size=11), (50, 1)), rng.normal(size=(10, 11))])
    y = ["Holt"] * 50 + ["Mean", "SES"] * 5
    assert recommend_meta(X, y, X[:1]) == [MethodId("Holt")]


def test_meta_threshold_labels_fit_perfectly():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(80, 11))
    y = ["Naive" if v > 0 else "Mean" for v in X[:, 4]]
    learner = MetaLearner(seed=0).fit(X, y)
    assert [str(m) for m in learner.predict(X)] == y


def test_meta_single_class_constant():
    learner = MetaLearner().fit(np.zeros((3, 11)), ["SES"] * 3)
    assert learner.predict(np.ones((2, 11))) == [MethodId("SES")] * 2


def test_meta_matrix_truncates():
    v = np.random.default_rng(4).normal(size=(2, 60))
    assert np.array_equal(meta_matrix(v, 40), meta_matrix(v[:, :40]))


def test_recommendations_roundtrip(tmp_path):
    recs = {"a": MethodId("Naive"), "b": MethodId.parse("HoltWinters(7)")}
    write_recommendations(tmp_path / "r.csv", recs)
    assert read_recommendations(tmp_path / "r.csv") == recs
