"""Run configuration, the end-to-end pipeline, evaluation reports and sweeps.

One fold plan drives everything.  Its first ``cv_folds`` folds belong to the
selectors (the cross-validation baseline scores them); the last ``label_folds``
folds produce the ground-truth labels.  Every selector input (clusters,
features, graph embeddings, sequence windows, information-criterion fits,
meta features) is cut at ``cutoff``, the first label-fold test index, so no
selector decision can depend on a label-fold value.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from tsrec.baselines import (
    meta_matrix,
    recommend_aic,
    recommend_cv,
    recommend_meta,
    recommend_random,
    write_recommendations,
)
from tsrec.errors import ConfigError, DataError
from tsrec.features import WARMUP, compute_features, hierarchical_cluster
from tsrec.forecasters import DEFAULT_METHODS, MethodId
from tsrec.graphify import (
    GraphEmbedding,
    Node2VecConfig,
    SsaConfig,
    embed_panel,
    read_embeddings,
    write_embeddings,
)
from tsrec.labeler import METRICS, LabelTable, canonical_methods, label_best, make_folds, panel_hash
from tsrec.panel import (
    RelationGraph,
    SyntheticSpec,
    TimeSeriesPanel,
    generate_synthetic,
    read_panel_dir,
    write_panel_dir,
)
from tsrec.recommender import (
    RecommenderConfig,
    build_windows,
    load_model,
    normalize_rows,
    predict,
    save_model,
    train,
)

logger = logging.getLogger(__name__)

SELECTORS = ("gnn", "random", "cv", "aic", "meta")
SEQ_SIZES = (16, 32, 64, 128, 256)
BATCH_SIZES = (8, 16, 32, 64, 128, 256, 512)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Flat key=value run configuration; every stochastic stage derives from ``seed``."""

    # data: a panel directory, or a synthetic panel when empty
    panel: str = ""
    n_entities: int = 200
    series_length: int = 365
    rw_move_prob: float = 0.5
    n_relation_types: int = 20
    p_intra: float = 0.3
    p_inter: float = 0.01
    noise: float = 1.0
    # ingestion
    values_path: str = ""
    relations_path: str = ""
    fill_limit: float = 0.05
    # labelling
    methods: str = ""
    metric: str = "SMAPE"
    horizon: int = 1
    label_folds: int = 30
    cv_folds: int = 30
    refit: str = "auto"
    # graph embedding
    ssa_window: int = 32
    ssa_energy: float = 0.9
    n2v_p: float = 1.0
    n2v_q: float = 1.0
    n2v_walks: int = 16
    n2v_length: int = 16
    n2v_dim: int = 128
    n2v_window: int = 2
    n2v_negatives: int = 3
    n2v_epochs: int = 1
    n2v_lr: float = 0.025
    pooling: str = "mean"
    # recommender
    mode: str = "Explicit"
    hidden: int = 64
    seq_len: int = 128
    batch_size: int = 32
    epochs: int = 80
    learning_rate: float = 0.0005
    activation: str = "leaky_relu"
    lam: float = 0.5
    optimizer: str = "adam"  # tuned pipeline default; RecommenderConfig keeps plain SGD
    train_windows: int = 1
    window_stride: int = 5
    # evaluation
    selectors: str = "gnn,random,cv,aic,meta"
    test_fraction: float = 0.2
    seq_sizes: str = "16,32,64,128,256"
    batch_sizes: str = "8,16,32,64,128,256,512"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.train_windows < 1 or self.window_stride < 1:
            raise ConfigError("train_windows and window_stride must be >= 1")
        if self.label_folds < 1 or self.cv_folds < 1 or self.horizon < 1:
            raise ConfigError("label_folds, cv_folds and horizon must be >= 1")
        if self.panel and not Path(self.panel).is_dir():
            raise ConfigError(f"panel directory {self.panel!r} does not exist")
        for key in ("values_path", "relations_path"):
            value = getattr(self, key)
            if value and not Path(value).is_file():
                raise ConfigError(f"{key} {value!r} does not exist")
        for name in self.selector_list:
            if name not in SELECTORS:
                raise ConfigError(f"unknown selector {name!r}; choose from {SELECTORS}")
        self.recommender_config()
        self.node2vec_config()
        self.method_list()
        self.int_list(self.seq_sizes)
        self.int_list(self.batch_sizes)

    # derived configs --------------------------------------------------------

    @property
    def selector_list(self) -> list[str]:
        return [s.strip() for s in self.selectors.split(",") if s.strip()]

    def method_list(self) -> list[MethodId]:
        if not self.methods.strip():
            return canonical_methods(DEFAULT_METHODS)
        try:
            return canonical_methods(m.strip() for m in self.methods.split(";") if m.strip())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @staticmethod
    def int_list(text: str) -> list[int]:
        try:
            out = [int(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None
        if not out or min(out) < 1:
            raise ConfigError(f"sizes must be positive integers, got {text!r}")
        return out

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(n_entities=self.n_entities, series_length=self.series_length,
                             n_relation_types=self.n_relation_types, p_intra=self.p_intra,
                             p_inter=self.p_inter, noise=self.noise,
                             rw_move_prob=self.rw_move_prob, seed=self.seed)

    def ssa_config(self) -> SsaConfig:
        return SsaConfig(self.ssa_window, self.ssa_energy)

    def node2vec_config(self) -> Node2VecConfig:
        return Node2VecConfig(P=self.n2v_p, Q=self.n2v_q, walks_per_node=self.n2v_walks,
                              walk_length=self.n2v_length, dim=self.n2v_dim, window=self.n2v_window,
                              negatives=self.n2v_negatives, epochs=self.n2v_epochs,
                              learning_rate=self.n2v_lr, seed=self.seed)

    def recommender_config(self, **overrides) -> RecommenderConfig:
        kw = dict(mode=self.mode, hidden=self.hidden, seq_len=self.seq_len,
                  batch_size=self.batch_size, epochs=self.epochs, learning_rate=self.learning_rate,
                  activation=self.activation, lam=self.lam, optimizer=self.optimizer, seed=self.seed)
        kw.update(overrides)
        return RecommenderConfig(**kw)

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


def _convert(name: str, text: str, kind) -> object:
    text = text.strip()
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {kind}") from None
    return text


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    kinds = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    values: dict[str, object] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        values[key] = _convert(key, value, kinds[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    if path is None:
        return parse_config("", **overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, **overrides)


# ---------------------------------------------------------------------------
# entity split


def stratified_split(entities: Sequence[str], labels: Sequence[MethodId | str],
                     test_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Entity-level split stratified by label.

    Each class contributes floor(f * count) test entities; the remaining test
    slots up to round(f * N) go to the classes with the largest fractional
    parts (ties by class name).  Returned lists keep panel order.
    """
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(str(lab), []).append(i)
    names = sorted(by_class)
    target = int(round(test_fraction * len(entities)))
    quota = {c: test_fraction * len(by_class[c]) for c in names}
    take = {c: int(np.floor(quota[c])) for c in names}
    spare = target - sum(take.values())
    for c in sorted(names, key=lambda c: (-(quota[c] - take[c]), c))[:max(spare, 0)]:
        take[c] += 1
    test_idx: set[int] = set()
    for c in names:
        members = np.array(by_class[c])
        test_idx.update(members[rng.permutation(members.size)[:take[c]]].tolist())
    train = [e for i, e in enumerate(entities) if i not in test_idx]
    test = [e for i, e in enumerate(entities) if i in test_idx]
    return train, test


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class SelectorResult:
    name: str
    kind: str  # "selector" or "method"
    accuracy: float
    smape: float
    mse: float
    n: int
    complete: bool
    seconds: float = 0.0
    confusion: dict[tuple[str, str], int] = field(default_factory=dict)


@dataclass
class EvaluationReport:
    rows: list[SelectorResult]
    entities: list[str]

    def row(self, name: str) -> SelectorResult:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["name", "kind", "accuracy", "mean_smape", "mean_mse", "n", "complete"])
            for r in self.rows:
                w.writerow([r.name, r.kind, repr(r.accuracy), repr(r.smape), repr(r.mse), r.n,
                            int(r.complete)])

    def write_confusion(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["selector", "label", "recommended", "count"])
            for r in self.rows:
                if r.kind != "selector":
                    continue
                for (true, pred), count in sorted(r.confusion.items()):
                    w.writerow([r.name, true, pred, count])

    def summary(self) -> str:
        lines = [f"evaluation over {len(self.entities)} test entities", "",
                 f"{'name':<16}{'kind':<10}{'accuracy':>10}{'SMAPE':>12}{'MSE':>14}{'seconds':>10}"]
        for r in self.rows:
            acc = f"{r.accuracy:.4f}" if np.isfinite(r.accuracy) else "n/a"
            flag = "" if r.complete else "  (incomplete)"
            secs = f"{r.seconds:.2f}" if r.kind == "selector" else ""
            lines.append(f"{r.name:<16}{r.kind:<10}{acc:>10}{r.smape:>12.5f}{r.mse:>14.5f}{secs:>10}{flag}")
        return "\n".join(lines) + "\n"


def evaluate(recommendations: Mapping[str, Mapping[str, MethodId | str]], labels: LabelTable,
             entities: Sequence[str], timings: Mapping[str, float] | None = None,
             include_methods: bool = True) -> EvaluationReport:
    """Accuracy against the labels and label-fold forecast error of each selector.

    Forecast quality is the recommended method's mean SMAPE and MSE over the
    label folds, averaged across ``entities``.  Every raw forecasting method
    is also reported as an always-pick-it row.
    """
    timings = timings or {}
    pos = {e: i for i, e in enumerate(labels.entities)}
    missing = [e for e in entities if e not in pos]
    if missing:
        raise DataError(f"entities without labels: {missing[:5]}")
    midx = {m: j for j, m in enumerate(labels.methods)}
    smape = labels.scores_over(labels.label_folds, "SMAPE")
    mse = labels.scores_over(labels.label_folds, "MSE")
    truth = dict(zip(labels.entities, labels.best))
    rows = []

    def score_rows(name, kind, rec):
        have = [e for e in entities if e in rec]
        complete = len(have) == len(entities)
        hits, s_err, m_err, conf = 0, [], [], Counter()
        for e in have:
            m = MethodId.parse(rec[e])
            hits += m == truth[e]
            conf[(str(truth[e]), str(m))] += 1
            j = midx.get(m)
            s_err.append(smape[pos[e], j] if j is not None else np.inf)
            m_err.append(mse[pos[e], j] if j is not None else np.inf)
        acc = hits / len(have) if complete and have else float("nan")
        rows.append(SelectorResult(name, kind, acc, float(np.mean(s_err)) if have else float("nan"),
                                   float(np.mean(m_err)) if have else float("nan"), len(have),
                                   complete, timings.get(name, 0.0), dict(conf)))

    for name, rec in recommendations.items():
        score_rows(name, "selector", rec)
    if include_methods:
        for m in labels.methods:
            score_rows(str(m), "method", {e: m for e in entities})
    return EvaluationReport(rows, list(entities))


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Stage:
    """In-memory products of the data-preparation stages."""

    panel: TimeSeriesPanel
    graph: RelationGraph
    labels: LabelTable
    train: list[str]
    test: list[str]
    cutoff: int


class Pipeline:
    """Lazily computed, directory-cached pipeline stages for one RunConfig."""

    def __init__(self, cfg: RunConfig, out: str | Path | None = None):
        self.cfg = cfg
        self.out = Path(out) if out is not None else None
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
        self._panel = None
        self._labels = None
        self._features = None
        self._embedding = None
        self.timings: dict[str, float] = {}

    # panel -----------------------------------------------------------------

    def panel(self) -> tuple[TimeSeriesPanel, RelationGraph]:
        if self._panel is None:
            if self.cfg.panel:
                panel, graph, _ = read_panel_dir(self.cfg.panel)
            else:
                panel, graph, _ = generate_synthetic(self.cfg.synthetic_spec())
            self._panel = (panel, graph)
        return self._panel

    @property
    def n_folds(self) -> int:
        return self.cfg.cv_folds + self.cfg.label_folds

    def plan(self):
        panel, _ = self.panel()
        return make_folds(panel.length, self.n_folds, self.cfg.horizon)

    def cutoff(self) -> int:
        return self.plan().train_ends[self.cfg.cv_folds]

    @property
    def label_fold_ids(self) -> tuple[int, ...]:
        return tuple(range(self.cfg.cv_folds, self.n_folds))

    @property
    def cv_fold_ids(self) -> tuple[int, ...]:
        return tuple(range(self.cfg.cv_folds))

    # labels ----------------------------------------------------------------

    def labels(self) -> LabelTable:
        if self._labels is not None:
            return self._labels
        panel, _ = self.panel()
        plan = self.plan()
        key = {"panel": panel_hash(panel), "plan": plan.key(), "metric": self.cfg.metric}
        cache = self.out / "scores.json" if self.out is not None else None
        if cache is not None and cache.exists():
            blob = json.loads(cache.read_text())
            if blob.get("key") == key and blob.get("methods") == [str(m) for m in self.cfg.method_list()]:
                table = LabelTable.from_json(cache.read_text())
                table.label_folds = self.label_fold_ids
                self._labels = table
                return table
        t0 = time.perf_counter()
        table = label_best(panel, self.cfg.method_list(), plan, self.cfg.metric, self.cfg.seed,
                           self.cfg.refit, self.label_fold_ids)
        self.timings["label"] = time.perf_counter() - t0
        if cache is not None:
            cache.write_text(table.to_json(key["panel"]))
        self._labels = table
        return table

    def split(self) -> tuple[list[str], list[str]]:
        """Entity split stratified by the cross-validation folds' best method.

        Stratifying on pre-cutoff scores keeps the split independent of the
        label-fold values it is later judged on.
        """
        table = self.labels()
        strata = table.best_over(self.cv_fold_ids)
        return stratified_split(table.entities, strata, self.cfg.test_fraction, self.cfg.seed)

    # selector inputs ---------------------------------------------------------

    def features(self):
        """Clusters and features computed on the pre-cutoff panel only."""
        if self._features is None:
            panel, _ = self.panel()
            head = panel.truncate(self.cutoff())
            clusters = hierarchical_cluster(head.values)
            self._features = (compute_features(head, clusters), clusters)
        return self._features

    def embedding(self) -> GraphEmbedding:
        if self._embedding is not None:
            return self._embedding
        panel, _ = self.panel()
        cutoff = self.cutoff()
        path = self.out / "embeddings.bin" if self.out is not None else None
        n2v = self.cfg.node2vec_config()
        head_key = panel_hash(panel.truncate(cutoff))
        if path is not None and path.exists():
            emb = read_embeddings(path)
            probe = embed_config(self.cfg, cutoff, head_key)
            if emb.config == probe and emb.entities == panel.entities:
                self._embedding = emb
                return emb
        t0 = time.perf_counter()
        emb = embed_panel(panel, self.cfg.ssa_config(), n2v, self.cfg.pooling, end=cutoff,
                          n_jobs=threads())
        emb.config["panel"] = head_key
        self.timings["graphify"] = time.perf_counter() - t0
        if path is not None:
            write_embeddings(path, emb)
        self._embedding = emb
        return emb

    def windows(self, seq_len: int | None = None, end: int | None = None):
        """Normalised windows over [end - S, end); ``end`` defaults to the cutoff."""
        panel, _ = self.panel()
        fs, clusters = self.features()
        S = seq_len or self.cfg.seq_len
        end = self.cutoff() if end is None else end
        if S > end - WARMUP:
            raise ConfigError(f"seq_len {S} exceeds the {end - WARMUP} usable points before {end}")
        return build_windows(panel.values, fs.values, fs.names, end, S,
                             n_clusters=int(clusters.max()) + 1)

    def training_windows(self, seq_len: int):
        """Stacked windows (W x N x S x n_in) and next-value targets for training.

        Windows end at the cross-validation train ends cutoff-1, cutoff-1-stride, ...
        so every regression target lies before the cutoff.
        """
        last = self.cutoff() - 1
        ends = [last - k * self.cfg.window_stride for k in range(self.cfg.train_windows)]
        wins = [self.windows(seq_len, e) for e in ends]
        return np.stack([w.X for w in wins]), np.stack([w.y_next for w in wins])

    # recommender -----------------------------------------------------------

    def train_gnn(self, **overrides):
        """Fit the recommender on the training entities; returns (model, seconds)."""
        panel, graph = self.panel()
        table = self.labels()
        train_ents, _ = self.split()
        rcfg = self.cfg.recommender_config(**overrides)
        X, y = self.training_windows(rcfg.seq_len)
        Ep = normalize_rows(self.embedding().vectors)
        idx = np.array([panel.index(e) for e in train_ents])
        t0 = time.perf_counter()
        model = train(X, y, table.label_index(), Ep, graph, rcfg,
                      [str(m) for m in table.methods], idx)
        return model, time.perf_counter() - t0

    def gnn_predict(self, model, entities: Sequence[str]):
        panel, graph = self.panel()
        win = self.windows(model.config.seq_len)
        Ep = normalize_rows(self.embedding().vectors)
        idx = np.array([panel.index(e) for e in entities])
        cls, yhat = predict(win.X, Ep, graph, model, idx)
        recs = {e: MethodId.parse(model.classes[c]) for e, c in zip(entities, cls)}
        return recs, yhat, win.y_next[idx]

    # selectors ---------------------------------------------------------------

    def recommend(self, model=None) -> tuple[dict[str, dict[str, MethodId]], dict[str, float]]:
        """Recommendations of every configured selector for the test entities."""
        panel, _ = self.panel()
        table = self.labels()
        train_ents, test_ents = self.split()
        truth = dict(zip(table.entities, table.best))
        cutoff = self.cutoff()
        recs: dict[str, dict[str, MethodId]] = {}
        secs: dict[str, float] = {}
        for name in self.cfg.selector_list:
            t0 = time.perf_counter()
            if name == "gnn":
                if model is None:
                    model, fit_secs = self.train_gnn()
                    t0 -= fit_secs
                recs[name] = self.gnn_predict(model, test_ents)[0]
            elif name == "random":
                choice = recommend_random(truth[e] for e in train_ents)
                recs[name] = {e: choice for e in test_ents}
            elif name == "cv":
                recs[name] = recommend_cv(table, self.cv_fold_ids, test_ents)
            elif name == "aic":
                idx = [panel.index(e) for e in test_ents]
                recs[name] = recommend_aic(panel.values[idx], test_ents, table.methods, end=cutoff,
                                           seed=self.cfg.seed)
            elif name == "meta":
                tr = [panel.index(e) for e in train_ents]
                te = [panel.index(e) for e in test_ents]
                Xtr = meta_matrix(panel.values[tr], end=cutoff)
                Xte = meta_matrix(panel.values[te], end=cutoff)
                picks = recommend_meta(Xtr, [truth[e] for e in train_ents], Xte, seed=self.cfg.seed)
                recs[name] = dict(zip(test_ents, picks))
            secs[name] = time.perf_counter() - t0
        return recs, secs

    def run(self) -> EvaluationReport:
        recs, secs = self.recommend()
        _, test_ents = self.split()
        return evaluate(recs, self.labels(), test_ents, secs)


def embed_config(cfg: RunConfig, cutoff: int, head_key: str) -> dict:
    """Cache key of the graph embeddings: configs plus a hash of the pre-cutoff panel."""
    return {"panel": head_key, "ssa": dataclasses.asdict(cfg.ssa_config()), "node2vec": dataclasses.asdict(cfg.node2vec_config()),
            "pooling": cfg.pooling, "end": cutoff}


def threads() -> int:
    try:
        return max(1, int(os.environ.get("TSREC_THREADS", "1")))
    except ValueError:
        raise ConfigError("TSREC_THREADS must be an integer") from None


# ---------------------------------------------------------------------------
# sweeps


def sweep_sequential(pipe: Pipeline, sizes: Sequence[int] = SEQ_SIZES) -> list[dict]:
    """Next-value MSE (normalised scale) and accuracy on the test entities per window size."""
    limit = pipe.cutoff() - WARMUP
    bad = [s for s in sizes if s > limit]
    if bad:
        raise ConfigError(f"sequential sizes {bad} exceed the {limit} usable pre-cutoff points")
    _, test_ents = pipe.split()
    truth = dict(zip(pipe.labels().entities, pipe.labels().best))
    rows = []
    for S in sizes:
        model, _ = pipe.train_gnn(seq_len=S)
        recs, yhat, y = pipe.gnn_predict(model, test_ents)
        acc = float(np.mean([recs[e] == truth[e] for e in test_ents]))
        rows.append({"seq_len": S, "mse": float(np.mean((yhat - y) ** 2)), "accuracy": acc})
    return rows


def sweep_batch(pipe: Pipeline, sizes: Sequence[int] = BATCH_SIZES) -> list[dict]:
    """Recommendation accuracy on the test entities per batch size."""
    _, test_ents = pipe.split()
    truth = dict(zip(pipe.labels().entities, pipe.labels().best))
    rows = []
    for B in sizes:
        model, _ = pipe.train_gnn(batch_size=B)
        recs, yhat, y = pipe.gnn_predict(model, test_ents)
        acc = float(np.mean([recs[e] == truth[e] for e in test_ents]))
        rows.append({"batch_size": B, "accuracy": acc, "mse": float(np.mean((yhat - y) ** 2))})
    return rows


def write_rows(path: str | Path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


__all__ = [
    "BATCH_SIZES", "EvaluationReport", "Pipeline", "RunConfig", "SEQ_SIZES", "SelectorResult",
    "evaluate", "load_config", "parse_config", "stratified_split", "sweep_batch", "sweep_sequential",
    "write_rows", "write_recommendations", "save_model", "load_model", "write_panel_dir",
]
