"""Expanding-window cross-validation, error metrics and best-model labels."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from tsrec.errors import ConfigError, DataError
from tsrec.forecasters import (
    DEFAULT_METHODS,
    MethodId,
    fit,
    fit_expanding,
    min_length,
    nominal_params,
    predict,
    roll_forward,
)
from tsrec.panel import TimeSeriesPanel

logger = logging.getLogger(__name__)

METRICS = ("SMAPE", "MSE", "SMAPE_paper")


@dataclass(frozen=True)
class FoldPlan:
    """Expanding-window plan: fold k trains on [0, min_train + k*h) and tests on the next h points."""

    folds: tuple[tuple[range, range], ...]
    horizon: int
    min_train: int

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    @property
    def train_ends(self) -> list[int]:
        return [tr.stop for tr, _ in self.folds]

    @property
    def test_start(self) -> int:
        return self.folds[0][1].start

    def key(self) -> str:
        return f"folds={self.n_folds},h={self.horizon},min_train={self.min_train}"


def make_folds(T: int, n_folds: int, h: int = 1, min_train: int | None = None) -> FoldPlan:
    if min_train is None:
        min_train = T - n_folds * h
    if n_folds < 1 or h < 1 or min_train < 1:
        raise ConfigError("n_folds, h and min_train must be positive")
    if min_train + n_folds * h > T:
        raise ConfigError(
            f"infeasible fold plan: need min_train + n_folds*h <= T, "
            f"got {min_train} + {n_folds}*{h} > {T}"
        )
    folds = tuple(
        (range(0, min_train + k * h), range(min_train + k * h, min_train + (k + 1) * h))
        for k in range(n_folds)
    )
    return FoldPlan(folds=folds, horizon=h, min_train=min_train)


def score(actual: Sequence[float], forecast: Sequence[float], metric: str = "SMAPE") -> float:
    """Forecast error.

    MSE is the mean squared error.  SMAPE averages 2|F-A|/(|A|+|F|), counting
    0/0 terms as 0, so it lies in [0, 2].  SMAPE_paper is the aggregate form
    sum|F-A| / sum(A+F).
    """
    a = np.asarray(actual, dtype=np.float64)
    f = np.asarray(forecast, dtype=np.float64)
    if a.shape != f.shape or a.ndim != 1:
        raise DataError(f"actual and forecast must be equal-length 1-d sequences, got {a.shape} and {f.shape}")
    if a.size == 0:
        raise DataError("cannot score empty sequences")
    err = np.abs(f - a)
    if metric == "MSE":
        return float(np.mean(err ** 2))
    if metric == "SMAPE":
        denom = np.abs(a) + np.abs(f)
        terms = np.divide(2.0 * err, denom, out=np.zeros_like(err), where=denom > 0)
        return float(np.mean(terms))
    if metric == "SMAPE_paper":
        num, den = float(err.sum()), float((a + f).sum())
        if den == 0.0:
            return 0.0 if num == 0.0 else math.inf
        return num / den
    raise ConfigError(f"unknown metric {metric!r}; choose from {METRICS}")


def canonical_methods(methods: Iterable[MethodId | str]) -> list[MethodId]:
    out = sorted({MethodId.parse(m) for m in methods}, key=str)
    if not out:
        raise ConfigError("method set is empty")
    return out


def pick_best(mean_scores: np.ndarray, methods: Sequence[MethodId]) -> int:
    """Index of the argmin, ties broken by fewer parameters then method name."""
    keys = [(float(s), nominal_params(m), str(m)) for s, m in zip(mean_scores, methods)]
    return min(range(len(methods)), key=keys.__getitem__)


@dataclass
class LabelTable:
    """Per-entity best method plus the full fold-level score matrix."""

    entities: list[str]
    methods: list[MethodId]
    metric: str
    fold_scores: np.ndarray  # N x M x K
    forecasts: np.ndarray  # N x M x K x h
    actuals: np.ndarray  # N x K x h
    plan: FoldPlan
    label_folds: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.label_folds is None:
            self.label_folds = tuple(range(self.plan.n_folds))

    def scores_over(self, folds: Sequence[int], metric: str | None = None) -> np.ndarray:
        """N x M mean score over a subset of folds (+inf where any fold failed)."""
        folds = list(folds)
        if metric is None or metric == self.metric:
            fs = self.fold_scores[:, :, folds]
        else:
            fs = self.rescore(metric)[:, :, folds]
        return fs.mean(axis=2)

    def rescore(self, metric: str) -> np.ndarray:
        n, m, k, _ = self.forecasts.shape
        out = np.full((n, m, k), np.inf)
        for i in range(n):
            for j in range(m):
                for f in range(k):
                    if np.all(np.isfinite(self.forecasts[i, j, f])):
                        out[i, j, f] = score(self.actuals[i, f], self.forecasts[i, j, f], metric)
        return out

    @property
    def mean_scores(self) -> np.ndarray:
        return self.scores_over(self.label_folds)

    def best_over(self, folds: Sequence[int]) -> list[MethodId]:
        means = self.scores_over(folds)
        return [self.methods[pick_best(row, self.methods)] for row in means]

    @property
    def best(self) -> list[MethodId]:
        return self.best_over(self.label_folds)

    def labels(self) -> dict[str, MethodId]:
        return dict(zip(self.entities, self.best))

    def label_index(self) -> np.ndarray:
        pos = {m: i for i, m in enumerate(self.methods)}
        return np.array([pos[m] for m in self.best], dtype=np.int64)

    def write_csv(self, path: str | Path) -> None:
        means = self.mean_scores
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["entity_id", "best_method", *map(str, self.methods)])
            for i, (entity, best) in enumerate(zip(self.entities, self.best)):
                w.writerow([entity, str(best), *(repr(float(x)) for x in means[i])])

    def to_json(self, panel_hash: str) -> str:
        def enc(a: np.ndarray):
            return [x if math.isfinite(x) else None for x in a.ravel().tolist()]

        return json.dumps({
            "key": {"panel": panel_hash, "plan": self.plan.key(), "metric": self.metric},
            "entities": self.entities,
            "methods": [str(m) for m in self.methods],
            "label_folds": list(self.label_folds),
            "fold_scores": {"shape": list(self.fold_scores.shape), "data": enc(self.fold_scores)},
            "forecasts": {"shape": list(self.forecasts.shape), "data": enc(self.forecasts)},
            "actuals": {"shape": list(self.actuals.shape), "data": enc(self.actuals)},
            "plan": {"n_folds": self.plan.n_folds, "h": self.plan.horizon, "min_train": self.plan.min_train},
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> LabelTable:
        d = json.loads(text)

        def dec(blob):
            arr = np.array([np.inf if x is None else x for x in blob["data"]], dtype=np.float64)
            return arr.reshape(blob["shape"])

        plan = d["plan"]
        n_folds, h, min_train = plan["n_folds"], plan["h"], plan["min_train"]
        fplan = make_folds(min_train + n_folds * h, n_folds, h, min_train)
        forecasts = dec(d["forecasts"])
        forecasts[~np.isfinite(forecasts)] = np.nan
        return cls(d["entities"], [MethodId.parse(m) for m in d["methods"]], d["key"]["metric"],
                   dec(d["fold_scores"]), forecasts, dec(d["actuals"]), fplan,
                   tuple(d["label_folds"]))


def panel_hash(panel: TimeSeriesPanel) -> str:
    h = hashlib.sha256()
    h.update("\x1f".join(panel.entities).encode())
    h.update(np.ascontiguousarray(panel.values).tobytes())
    return h.hexdigest()[:16]


def _entity_forecasts(y: np.ndarray, methods: list[MethodId], plan: FoldPlan, seed: int,
                      refit: str) -> np.ndarray:
    """M x K x h forecasts for one series; NaN where a method failed."""
    ends = plan.train_ends
    out = np.full((len(methods), plan.n_folds, plan.horizon), np.nan)
    for j, method in enumerate(methods):
        try:
            if method.expensive and refit == "auto":
                base = fit(method, y[:ends[0]], seed)
                models = [base] + [roll_forward(base, y[:e]) for e in ends[1:]]
            else:
                models = fit_expanding(method, y, ends, seed)
            for k, model in enumerate(models):
                fc = predict(model, plan.horizon)
                if not np.all(np.isfinite(fc)):
                    raise FloatingPointError("non-finite forecast")
                out[j, k] = fc
        except (DataError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("%s failed (%s); scored as +inf", method, exc)
            out[j] = np.nan
    return out


def label_best(
    panel: TimeSeriesPanel,
    methods: Iterable[MethodId | str] = DEFAULT_METHODS,
    plan: FoldPlan | None = None,
    metric: str = "SMAPE",
    seed: int = 0,
    refit: str = "auto",
    label_folds: Sequence[int] | None = None,
    n_jobs: int | None = None,
) -> LabelTable:
    """Score every method on every fold and label each series with the best one.

    ``refit="auto"`` refits closed-form and statistical methods on every fold
    but fits the learned models (GBTLags, RNNForecaster) once on the first
    fold's training range and rolls them forward; ``refit="every"`` refits
    everything.  Either way no fold's fit sees that fold's test values.
    """
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; choose from {METRICS}")
    if refit not in ("auto", "every"):
        raise ConfigError("refit must be 'auto' or 'every'")
    methods = canonical_methods(methods)
    if plan is None:
        plan = make_folds(panel.length, n_folds=30, h=1)
    if plan.folds[-1][1].stop > panel.length:
        raise ConfigError("fold plan extends past the end of the panel")
    for m in methods:
        if plan.min_train < min_length(m):
            raise DataError(f"{m} needs at least {min_length(m)} training points; plan gives {plan.min_train}")

    n_jobs = n_jobs or int(os.environ.get("TSREC_THREADS", "1"))
    rows = [panel.values[i] for i in range(panel.n_entities)]
    if n_jobs > 1:
        from joblib import Parallel, delayed

        per_entity = Parallel(n_jobs=n_jobs)(
            delayed(_entity_forecasts)(y, methods, plan, seed, refit) for y in rows)
    else:
        per_entity = [_entity_forecasts(y, methods, plan, seed, refit) for y in rows]
    forecasts = np.stack(per_entity)
    actuals = np.stack([
        np.stack([panel.values[i, te.start:te.stop] for _, te in plan.folds])
        for i in range(panel.n_entities)
    ])
    n, m, k = forecasts.shape[:3]
    fold_scores = np.full((n, m, k), np.inf)
    for i in range(n):
        for j in range(m):
            for f in range(k):
                if np.all(np.isfinite(forecasts[i, j, f])):
                    fold_scores[i, j, f] = score(actuals[i, f], forecasts[i, j, f], metric)
    return LabelTable(list(panel.entities), methods, metric, fold_scores, forecasts, actuals, plan,
                      tuple(label_folds) if label_folds is not None else None)


def read_labels_csv(path: str | Path) -> dict[str, MethodId]:
    with Path(path).open(newline="") as fh:
        return {row["entity_id"]: MethodId.parse(row["best_method"]) for row in csv.DictReader(fh)}
