"""Panel and relation-graph data model, CSV ingestion, and a synthetic generator.

Ingestion format is long CSV with header ``entity_id,date,value`` and optional
``high,low,close,volume`` columns.  Relations are a membership list
``entity_id,relation_type_id``; two entities are related under type ``k`` when
both are members of ``k``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from tsrec.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

OHLCV_COLUMNS = ("high", "low", "close", "volume")
FAMILIES = ("random_walk", "trend", "seasonal", "ar1")
MIN_RELATION_RATIO = 0.05


@dataclass
class TimeSeriesPanel:
    """N aligned univariate series plus optional OHLCV columns.

    ``features`` is an N x T x F tensor filled in by :mod:`tsrec.features`;
    it starts empty (F = 0).
    """

    entities: list[str]
    values: np.ndarray
    dates: list[str]
    cluster_id: np.ndarray | None = None
    ohlcv: dict[str, np.ndarray] = field(default_factory=dict)
    features: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("panel values must be an N x T matrix")
        n, t = self.values.shape
        if n < 2:
            raise DataError(f"panel needs at least 2 entities, got {n}")
        if t < 2:
            raise DataError(f"panel needs series length T >= 2, got {t}")
        if len(self.entities) != n or len(set(self.entities)) != n:
            raise DataError("entity ids must be unique and match the number of rows")
        if len(self.dates) != t:
            raise DataError("number of dates must equal series length")
        if not np.all(np.isfinite(self.values)):
            raise DataError("panel values contain missing or non-finite entries")
        if self.cluster_id is None:
            self.cluster_id = np.zeros(n, dtype=np.int64)
        self.cluster_id = np.asarray(self.cluster_id, dtype=np.int64)
        for name, arr in self.ohlcv.items():
            if name not in OHLCV_COLUMNS or np.shape(arr) != (n, t):
                raise DataError(f"bad OHLCV column {name!r}")
        if self.features is None:
            self.features = np.zeros((n, t, 0))

    @property
    def n_entities(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def has_ohlcv(self) -> bool:
        return all(c in self.ohlcv for c in OHLCV_COLUMNS)

    def index(self, entity: str) -> int:
        try:
            return self.entities.index(entity)
        except ValueError:
            raise KeyError(f"entity {entity!r} not in panel") from None

    def truncate(self, end: int) -> TimeSeriesPanel:
        """Copy restricted to the first ``end`` time steps."""
        return TimeSeriesPanel(
            entities=list(self.entities),
            values=self.values[:, :end].copy(),
            dates=list(self.dates[:end]),
            cluster_id=self.cluster_id.copy(),
            ohlcv={k: v[:, :end].copy() for k, v in self.ohlcv.items()},
            features=self.features[:, :end].copy(),
        )


class RelationGraph:
    """Entity x entity multi-hot relation encoding.

    ``adjacency[i, j, k]`` is 1 when entities i and j share relation type k.
    Built from a membership matrix, so it is symmetric with an empty diagonal
    by construction.
    """

    def __init__(self, membership: np.ndarray, relation_types: list[str] | None = None):
        membership = np.asarray(membership, dtype=np.uint8)
        if membership.ndim != 2:
            raise DataError("membership must be an N x K matrix")
        self.membership = membership
        n, k = membership.shape
        self.relation_types = (
            list(relation_types) if relation_types is not None else [str(i) for i in range(k)]
        )
        adj = (membership[:, None, :] & membership[None, :, :]).astype(np.uint8)
        idx = np.arange(n)
        adj[idx, idx, :] = 0
        self.adjacency = adj

    @property
    def n_entities(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_relation_types(self) -> int:
        return self.adjacency.shape[2]

    def a(self, j: int, i: int) -> np.ndarray:
        """K-length multi-hot vector for the ordered pair (j, i)."""
        return self.adjacency[j, i]

    @property
    def related(self) -> np.ndarray:
        """Boolean N x N mask of pairs sharing at least one relation."""
        return self.adjacency.any(axis=2)

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.related[i])

    @property
    def n_related_pairs(self) -> int:
        return int(np.triu(self.related, 1).sum())

    @property
    def relation_ratio(self) -> float:
        n = self.n_entities
        return self.n_related_pairs / (n * (n - 1) / 2)

    def check_ratio(self) -> float:
        ratio = self.relation_ratio
        if ratio < MIN_RELATION_RATIO:
            warnings.warn(
                f"relation ratio {ratio:.4f} is below {MIN_RELATION_RATIO:.0%}; "
                "relational embeddings will carry little signal",
                stacklevel=2,
            )
        return ratio


# ---------------------------------------------------------------------------
# ingestion


def _parse_float(text: str, line_no: int, column: str) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"row {line_no}: cannot parse {column}={text!r}") from None


def load_panel(path: str | Path, fill_limit: float = 0.05) -> TimeSeriesPanel:
    """Read a long-format CSV into an aligned panel.

    Series whose missing fraction exceeds ``fill_limit`` are dropped with a
    warning.  The panel spans the dates common to all surviving series and
    remaining gaps are forward-filled.
    """
    if not 0.0 <= fill_limit <= 1.0:
        raise ConfigError("fill_limit must be in [0, 1]")
    path = Path(path)
    records: dict[str, dict[str, dict[str, float]]] = {}
    order: list[str] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        required = ["entity_id", "date", "value"]
        if header[:3] != required:
            raise DataError(f"{path}: header must start with {','.join(required)}")
        extra = header[3:]
        for col in extra:
            if col not in OHLCV_COLUMNS:
                raise DataError(f"{path}: unknown column {col!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"row {line_no}: expected {len(header)} fields, got {len(row)}")
            entity, day = row[0].strip(), row[1].strip()
            if not entity or not day:
                raise DataError(f"row {line_no}: empty entity_id or date")
            cols = {"value": _parse_float(row[2], line_no, "value")}
            for col, text in zip(extra, row[3:]):
                cols[col] = _parse_float(text, line_no, col)
            if entity not in records:
                records[entity] = {}
                order.append(entity)
            if day in records[entity]:
                raise DataError(f"row {line_no}: duplicate date {day} for {entity}")
            records[entity][day] = cols

    grid = sorted({d for rec in records.values() for d in rec})
    columns = ["value", *extra]
    survivors = []
    for entity in order:
        rec = records[entity]
        observed = sum(1 for d in grid if d in rec and np.isfinite(rec[d]["value"]))
        missing = 1.0 - observed / len(grid)
        if missing > fill_limit:
            warnings.warn(
                f"dropping {entity}: {missing:.1%} missing exceeds fill limit {fill_limit:.1%}",
                stacklevel=2,
            )
            continue
        survivors.append(entity)
    if len(survivors) < 2:
        raise DataError(f"{path}: fewer than 2 entities survive filtering")

    def finite_dates(entity: str) -> list[str]:
        return [d for d in grid if d in records[entity] and np.isfinite(records[entity][d]["value"])]

    start = max(finite_dates(e)[0] for e in survivors)
    stop = min(finite_dates(e)[-1] for e in survivors)
    dates = [d for d in grid if start <= d <= stop]

    data = {c: np.full((len(survivors), len(dates)), np.nan) for c in columns}
    for i, entity in enumerate(survivors):
        rec = records[entity]
        for t, d in enumerate(dates):
            if d in rec:
                for c in columns:
                    data[c][i, t] = rec[d][c]
    for arr in data.values():
        _forward_fill(arr)
    ohlcv = {c: data[c] for c in extra}
    return TimeSeriesPanel(entities=survivors, values=data["value"], dates=dates, ohlcv=ohlcv)


def _forward_fill(arr: np.ndarray) -> None:
    """In-place forward fill along axis 1; leading gaps take the first observation."""
    for row in arr:
        good = np.isfinite(row)
        if not good.any():
            raise DataError("column has no observations for an entity")
        idx = np.where(good, np.arange(row.size), 0)
        np.maximum.accumulate(idx, out=idx)
        first = np.argmax(good)
        idx[:first] = first
        row[:] = row[idx]


def load_relations(path: str | Path, panel: TimeSeriesPanel) -> RelationGraph:
    """Read a membership list and build the shared-membership relation graph."""
    path = Path(path)
    pairs: list[tuple[int, str]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["entity_id", "relation_type_id"]:
            raise DataError(f"{path}: header must be entity_id,relation_type_id")
        lookup = {e: i for i, e in enumerate(panel.entities)}
        unknown = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"row {line_no}: expected 2 fields, got {len(row)}")
            entity, rtype = row[0].strip(), row[1].strip()
            if entity not in lookup:
                unknown.add(entity)
                continue
            pairs.append((lookup[entity], rtype))
    if unknown:
        warnings.warn(f"skipping {len(unknown)} relation rows for entities not in panel", stacklevel=2)
    types = sorted({t for _, t in pairs}, key=_type_sort_key)
    tidx = {t: k for k, t in enumerate(types)}
    membership = np.zeros((panel.n_entities, len(types)), dtype=np.uint8)
    for i, t in pairs:
        membership[i, tidx[t]] = 1
    graph = RelationGraph(membership, types)
    graph.check_ratio()
    return graph


def _type_sort_key(t: str):
    try:
        return (0, int(t), t)
    except ValueError:
        return (1, 0, t)


# ---------------------------------------------------------------------------
# panel directory: values.csv, relations.csv, meta.json


def write_panel_dir(
    out: str | Path,
    panel: TimeSeriesPanel,
    graph: RelationGraph,
    seed: int | None = None,
    extra_meta: dict | None = None,
) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cols = [c for c in OHLCV_COLUMNS if c in panel.ohlcv]
    with (out / "values.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity_id", "date", "value", *cols])
        for i, entity in enumerate(panel.entities):
            for t, d in enumerate(panel.dates):
                w.writerow([entity, d, repr(float(panel.values[i, t])),
                            *(repr(float(panel.ohlcv[c][i, t])) for c in cols)])
    with (out / "relations.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity_id", "relation_type_id"])
        for i, entity in enumerate(panel.entities):
            for k in np.flatnonzero(graph.membership[i]):
                w.writerow([entity, graph.relation_types[k]])
    meta = {
        "entities": panel.entities,
        "T": panel.length,
        "K": graph.n_relation_types,
        "relation_types": graph.relation_types,
        "seed": seed,
        "relation_ratio": graph.relation_ratio,
    }
    meta.update(extra_meta or {})
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def read_panel_dir(path: str | Path) -> tuple[TimeSeriesPanel, RelationGraph, dict]:
    path = Path(path)
    if not (path / "values.csv").exists():
        raise DataError(f"{path} is not a panel directory (values.csv missing)")
    meta = json.loads((path / "meta.json").read_text()) if (path / "meta.json").exists() else {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        panel = load_panel(path / "values.csv", fill_limit=1.0)
        graph = load_relations(path / "relations.csv", panel)
    if meta.get("relation_types") and len(meta["relation_types"]) != graph.n_relation_types:
        # types with no members are not recoverable from the membership list
        types = meta["relation_types"]
        membership = np.zeros((panel.n_entities, len(types)), dtype=np.uint8)
        pos = {t: k for k, t in enumerate(types)}
        for k_old, t in enumerate(graph.relation_types):
            membership[:, pos[t]] = graph.membership[:, k_old]
        graph = RelationGraph(membership, types)
    return panel, graph, meta


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic panel with planted best-model structure."""

    n_entities: int = 200
    series_length: int = 365
    mix: tuple[tuple[str, float], ...] = (
        ("random_walk", 1 / 3),
        ("trend", 2 / 9),
        ("seasonal", 2 / 9),
        ("ar1", 2 / 9),
    )
    n_relation_types: int = 20
    p_intra: float = 0.3
    p_inter: float = 0.01
    noise: float = 1.0
    seasonal_period: int = 7
    rw_move_prob: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_entities < 2 or self.series_length < 2:
            raise ConfigError("synthetic panel needs n_entities >= 2 and series_length >= 2")
        names = [n for n, _ in self.mix]
        if any(n not in FAMILIES for n in names) or len(set(names)) != len(names):
            raise ConfigError(f"mix families must be distinct members of {FAMILIES}")
        fracs = [f for _, f in self.mix]
        if any(f < 0 for f in fracs) or not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise ConfigError("mix fractions must be non-negative and sum to 1")
        if not 0.0 < self.rw_move_prob <= 1.0:
            raise ConfigError("rw_move_prob must be in (0, 1]")
        for name in ("p_intra", "p_inter"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.noise <= 0 or self.n_relation_types < 1 or self.seasonal_period < 2:
            raise ConfigError("noise > 0, n_relation_types >= 1 and seasonal_period >= 2 required")

    @classmethod
    def from_mix(cls, mix: dict[str, float], **kwargs) -> SyntheticSpec:
        return cls(mix=tuple((k, float(v)) for k, v in mix.items()), **kwargs)


def _family_counts(n: int, mix) -> list[tuple[str, int]]:
    raw = [(name, frac * n) for name, frac in mix]
    counts = [(name, int(math.floor(x))) for name, x in raw]
    short = n - sum(c for _, c in counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i][1] - counts[i][1]), i))
    for i in order[:short]:
        counts[i] = (counts[i][0], counts[i][1] + 1)
    return counts


def _simulate(family: str, rng: np.random.Generator, t_len: int, spec: SyntheticSpec) -> np.ndarray:
    level = rng.uniform(50.0, 150.0)
    eps = rng.standard_normal(t_len) * spec.noise
    t = np.arange(t_len, dtype=np.float64)
    if family == "random_walk":
        # the value moves on a fraction of days; per-day variance stays noise**2
        moves = rng.random(t_len) < spec.rw_move_prob
        steps = np.where(moves, eps / math.sqrt(spec.rw_move_prob), 0.0)
        return level + np.concatenate([[0.0], np.cumsum(steps[1:])])
    if family == "trend":
        slope = rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.2)
        return level + slope * t + eps
    if family == "seasonal":
        amp = rng.uniform(3.0, 8.0) * spec.noise
        phase = rng.uniform(0.0, 2 * np.pi)
        return level + amp * np.sin(2 * np.pi * t / spec.seasonal_period + phase) + eps
    if family == "ar1":
        phi = rng.uniform(0.3, 0.8)
        x = np.empty(t_len)
        x[0] = eps[0] / math.sqrt(1 - phi * phi)
        for i in range(1, t_len):
            x[i] = phi * x[i - 1] + eps[i]
        return level + x
    raise ConfigError(f"unknown family {family!r}")


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[TimeSeriesPanel, RelationGraph, dict[str, str]]:
    """Build a panel whose relation graph is informative about series family.

    Random-walk series stay flat on a ``1 - rw_move_prob`` share of days, as
    daily order or quote data does.  Relation types are partitioned among the
    families.  An entity joins each type of its own family with probability
    ``p_intra`` and each other type with probability ``p_inter``, so related
    pairs are mostly same-family.
    """
    rng = np.random.default_rng(spec.seed)
    n, t_len = spec.n_entities, spec.series_length
    families = [name for name, c in _family_counts(n, spec.mix) for _ in range(c)]
    families = [families[i] for i in rng.permutation(n)]
    entities = [f"e{i:0{len(str(n - 1))}d}" for i in range(n)]

    values = np.vstack([_simulate(f, rng, t_len, spec) for f in families])

    fam_index = {f: i for i, f in enumerate(FAMILIES)}
    owner = np.arange(spec.n_relation_types) % len(FAMILIES)
    own = owner[None, :] == np.array([fam_index[f] for f in families])[:, None]
    probs = np.where(own, spec.p_intra, spec.p_inter)
    membership = (rng.random((n, spec.n_relation_types)) < probs).astype(np.uint8)

    start = date(2020, 1, 1)
    dates = [(start + timedelta(days=i)).isoformat() for i in range(t_len)]
    panel = TimeSeriesPanel(entities=entities, values=values, dates=dates)
    graph = RelationGraph(membership, [str(k) for k in range(spec.n_relation_types)])
    return panel, graph, dict(zip(entities, families))
