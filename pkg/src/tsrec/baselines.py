"""Model-selection baselines: modal label, cross-validation, AIC, meta-learning."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from tsrec.errors import ConfigError, DataError
from tsrec.forecasters import MethodId, fit, information_criterion, nominal_params
from tsrec.labeler import LabelTable, canonical_methods

logger = logging.getLogger(__name__)

META_FEATURES = (
    "length", "std", "skewness", "kurtosis", "acf1", "acf7", "acf30",
    "trend_strength", "turning_point_rate", "max_step_change", "coef_variation",
)
RF_TREES = 100


def _tie_key(method: MethodId) -> tuple[int, str]:
    return nominal_params(method), str(method)


# ---------------------------------------------------------------------------
# modal label


def recommend_random(train_labels: Iterable[MethodId | str]) -> MethodId:
    """Most common training label; ties go to fewer parameters, then name."""
    counts = Counter(MethodId.parse(m) for m in train_labels)
    if not counts:
        raise DataError("no training labels")
    return min(counts, key=lambda m: (-counts[m], *_tie_key(m)))


# ---------------------------------------------------------------------------
# cross-validation


def recommend_cv(table: LabelTable, folds: Sequence[int], entities: Sequence[str] | None = None
                 ) -> dict[str, MethodId]:
    """Per-entity argmin of the mean score over ``folds`` (training folds only)."""
    if not folds:
        raise ConfigError("cross-validation baseline needs at least one fold")
    best = dict(zip(table.entities, table.best_over(folds)))
    if entities is None:
        return best
    return {e: best[e] for e in entities}


# ---------------------------------------------------------------------------
# information criterion


@dataclass
class AicChoice:
    method: MethodId
    value: float
    perfect_fit: bool


def select_by_ic(series, methods: Iterable[MethodId | str], kind: str = "AIC", seed: int = 0) -> AicChoice:
    """Fit every method on ``series`` and keep the lowest criterion.

    A perfect fit scores -inf and wins outright (flagged).  Methods whose fit
    fails are skipped.
    """
    y = np.asarray(series, dtype=np.float64)
    scored = []
    for m in canonical_methods(methods):
        try:
            model = fit(m, y, seed)
            value = information_criterion(model, kind)
        except (DataError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("%s skipped for %s (%s)", m, kind, exc)
            continue
        if math.isnan(value):
            continue
        scored.append((value, *_tie_key(m), m))
    if not scored:
        raise DataError(f"no method could be fitted for {kind} selection")
    value, _, _, method = min(scored, key=lambda t: t[:3])
    return AicChoice(method, value, value == -math.inf)


def recommend_aic(values: np.ndarray, entities: Sequence[str], methods: Iterable[MethodId | str],
                  end: int | None = None, kind: str = "AIC", seed: int = 0) -> dict[str, MethodId]:
    """Information-criterion choice per entity, fitted on values[:, :end]."""
    methods = canonical_methods(methods)
    out = {}
    for entity, row in zip(entities, np.asarray(values)):
        choice = select_by_ic(row[:end], methods, kind, seed)
        if choice.perfect_fit:
            logger.info("%s: perfect in-sample fit by %s", entity, choice.method)
        out[entity] = choice.method
    return out


# ---------------------------------------------------------------------------
# meta-learning


@dataclass
class MetaFeatureVector:
    values: np.ndarray
    degenerate: bool


def _acf(x: np.ndarray, lag: int) -> float:
    x = x - x.mean()
    den = float(x @ x)
    if lag >= x.size or den == 0.0:
        return math.nan
    return float(x[:-lag] @ x[lag:]) / den


def meta_features(series) -> MetaFeatureVector:
    """Fixed 11-element summary of one series.

    Undefined entries (flat series, lags beyond the length, zero mean) are
    set to 0 and the vector is flagged degenerate.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 3:
        raise DataError("meta features need a 1-d series of length >= 3")
    n = x.size
    sd = float(x.std(ddof=1))
    mean = float(x.mean())
    flat = sd == 0.0
    with np.errstate(all="ignore"):
        skew = math.nan if flat else float(stats.skew(x, bias=False))
        kurt = math.nan if flat else float(stats.kurtosis(x, bias=False))
    t = np.arange(n, dtype=np.float64)
    r2 = math.nan if flat else float(np.corrcoef(t, x)[0, 1] ** 2)
    dx = np.diff(x)
    turning = float(np.mean(dx[:-1] * dx[1:] < 0))
    step = math.nan if flat else float(np.abs(dx).max() / sd)
    cv = sd / abs(mean) if mean != 0.0 else math.nan
    vec = np.array([n, sd, skew, kurt, _acf(x, 1), _acf(x, 7), _acf(x, 30), r2, turning, step, cv])
    bad = ~np.isfinite(vec)
    vec[bad] = 0.0
    return MetaFeatureVector(vec, bool(bad.any()))


def meta_matrix(values: np.ndarray, end: int | None = None) -> np.ndarray:
    return np.stack([meta_features(row[:end]).values for row in np.asarray(values)])


class MetaLearner:
    """Random forest from meta features to best-model labels."""

    def __init__(self, seed: int = 0, n_trees: int = RF_TREES):
        self.seed = seed
        self.n_trees = n_trees
        self.constant: MethodId | None = None
        self.forest = None

    def fit(self, X: np.ndarray, labels: Sequence[MethodId | str]) -> MetaLearner:
        from sklearn.ensemble import RandomForestClassifier

        y = [str(MethodId.parse(m)) for m in labels]
        if len(y) == 0:
            raise DataError("meta-learner needs training rows")
        if len(set(y)) < 2:
            self.constant = MethodId.parse(y[0])
            logger.warning("meta-learner saw one class (%s); predicting it everywhere", y[0])
            return self
        self.forest = RandomForestClassifier(
            n_estimators=self.n_trees, criterion="gini", max_features="sqrt",
            max_depth=None, random_state=self.seed)
        self.forest.fit(np.asarray(X, dtype=np.float64), y)
        return self

    def predict(self, X: np.ndarray) -> list[MethodId]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.constant is not None:
            return [self.constant] * X.shape[0]
        if self.forest is None:
            raise ConfigError("meta-learner is not fitted")
        return [MethodId.parse(m) for m in self.forest.predict(X)]


def recommend_meta(train_X: np.ndarray, train_labels: Sequence[MethodId | str], test_X: np.ndarray,
                   seed: int = 0) -> list[MethodId]:
    return MetaLearner(seed).fit(train_X, train_labels).predict(test_X)


# ---------------------------------------------------------------------------
# output


def write_recommendations(path: str | Path, recs: Mapping[str, MethodId | str]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity_id", "method"])
        for entity, method in recs.items():
            w.writerow([entity, str(method)])


def read_recommendations(path: str | Path) -> dict[str, MethodId]:
    with Path(path).open(newline="") as fh:
        return {row["entity_id"]: MethodId.parse(row["method"]) for row in csv.DictReader(fh)}
