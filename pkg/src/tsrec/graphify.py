"""Series to SSA reconstruction to visibility graph to node2vec embedding.

Each entity's series becomes one fixed-size vector e'_i: the series is
denoised by singular spectrum analysis, turned into a natural visibility
graph, and embedded with second-order random walks plus skip-gram with
negative sampling.  Node vectors are pooled into a single row.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np

from tsrec.errors import ConfigError, DataError
from tsrec.panel import TimeSeriesPanel

HEADER = struct.Struct("<QQQ")
HASH_BYTES = 32


# ---------------------------------------------------------------------------
# singular spectrum analysis


@dataclass
class SsaDecomposition:
    """Eigentriples of the trajectory matrix plus their diagonal-averaged components."""

    window: int
    singular_values: np.ndarray  # k
    left: np.ndarray  # L x k
    right: np.ndarray  # (T-L+1) x k
    components: np.ndarray  # k x T

    @property
    def energy(self) -> np.ndarray:
        """Cumulative share of the squared singular spectrum."""
        sq = self.singular_values ** 2
        total = sq.sum()
        if total == 0.0:
            return np.ones_like(sq)
        return np.cumsum(sq) / total

    def n_for_energy(self, threshold: float) -> int:
        """Smallest number of leading components whose energy reaches ``threshold``."""
        return int(np.searchsorted(self.energy, threshold - 1e-12) + 1)

    def reconstruct(self, n_components: int | None = None) -> np.ndarray:
        k = self.components.shape[0] if n_components is None else n_components
        return self.components[:k].sum(axis=0)


def hankel(series: np.ndarray, L: int) -> np.ndarray:
    """L x (T-L+1) trajectory matrix; column j is series[j:j+L]."""
    return np.lib.stride_tricks.sliding_window_view(series, L).T.copy()


def diagonal_average(mat: np.ndarray) -> np.ndarray:
    """Average the anti-diagonals of an L x K matrix back into a length L+K-1 series."""
    L, K = mat.shape
    out = np.zeros(L + K - 1)
    counts = np.zeros(L + K - 1)
    for i in range(L):
        out[i:i + K] += mat[i]
        counts[i:i + K] += 1.0
    return out / counts


def ssa_decompose(series, L: int = 32) -> SsaDecomposition:
    y = np.asarray(series, dtype=np.float64)
    if y.ndim != 1:
        raise DataError("SSA expects a 1-d series")
    if not 2 <= L <= y.size // 2:
        raise ConfigError(f"SSA window must satisfy 2 <= L <= T/2, got L={L}, T={y.size}")
    if not np.all(np.isfinite(y)):
        raise DataError("SSA input contains non-finite values")
    X = hankel(y, L)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    comps = np.stack([diagonal_average(s[k] * np.outer(U[:, k], Vt[k])) for k in range(s.size)])
    return SsaDecomposition(L, s, U, Vt.T, comps)


def ssa_denoise(series, L: int = 32, energy: float = 0.9) -> np.ndarray:
    """Reconstruction from the leading components covering ``energy`` of the squared spectrum."""
    if not 0.0 < energy <= 1.0:
        raise ConfigError("energy threshold must be in (0, 1]")
    dec = ssa_decompose(series, L)
    return dec.reconstruct(dec.n_for_energy(energy))


# ---------------------------------------------------------------------------
# natural visibility graph


@dataclass
class VisibilityGraph:
    n: int
    edges: np.ndarray  # E x 2, a < b, lexicographic

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n), dtype=np.bool_)
        adj[self.edges[:, 0], self.edges[:, 1]] = True
        adj[self.edges[:, 1], self.edges[:, 0]] = True
        return adj

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) of the symmetric neighbour lists, indices sorted."""
        adj = self.adjacency()
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum(adj.sum(axis=1))
        return indptr, np.nonzero(adj)[1].astype(np.int64)


@numba.njit(cache=True)
def _visible(y, a, b):
    ya = y[a]
    yb = y[b]
    for c in range(a + 1, b):
        if not y[c] < yb + (ya - yb) * (b - c) / (b - a):
            return False
    return True


@numba.njit(cache=True)
def _visibility_edges(y):
    n = y.size
    out = np.empty((n * (n - 1) // 2, 2), dtype=np.int64)
    m = 0
    for a in range(n - 1):
        # running maximum slope from a; a later point is only visible if it beats it
        best = -np.inf
        for b in range(a + 1, n):
            slope = (y[b] - y[a]) / (b - a)
            if slope >= best - 1e-9 * (1.0 + abs(best)) and _visible(y, a, b):
                out[m, 0] = a
                out[m, 1] = b
                m += 1
            if slope > best:
                best = slope
    return out[:m].copy()


def visibility_graph(series) -> VisibilityGraph:
    """Natural visibility graph with the strict criterion.

    Nodes a < b are linked when every c between them satisfies
    y_c < y_b + (y_a - y_b)(b - c)/(b - a).  The running-slope prune only
    skips pairs that are clearly blocked; every candidate is confirmed with
    the criterion itself, so the edge set matches a direct pairwise check.
    """
    y = np.ascontiguousarray(series, dtype=np.float64)
    if y.ndim != 1 or y.size < 2:
        raise DataError("visibility graph needs a 1-d series of length >= 2")
    return VisibilityGraph(y.size, _visibility_edges(y))


# ---------------------------------------------------------------------------
# node2vec


@dataclass(frozen=True)
class Node2VecConfig:
    P: float = 1.0
    Q: float = 1.0
    walks_per_node: int = 16
    walk_length: int = 16
    dim: int = 128
    window: int = 2
    negatives: int = 3
    epochs: int = 1
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self) -> None:
        if self.P <= 0 or self.Q <= 0:
            raise ConfigError("node2vec P and Q must be positive")
        if min(self.walks_per_node, self.walk_length, self.dim) < 1:
            raise ConfigError("walks_per_node, walk_length and dim must be >= 1")
        if self.window < 1 or self.negatives < 0 or self.epochs < 0:
            raise ConfigError("window >= 1, negatives >= 0 and epochs >= 0 required")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass(frozen=True)
class SsaConfig:
    window: int = 32
    energy: float = 0.9


def transition_probs(g: VisibilityGraph, prev: int, curr: int, P: float, Q: float
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Neighbours of ``curr`` and the normalised second-order step probabilities."""
    adj = g.adjacency()
    nbrs = np.flatnonzero(adj[curr])
    w = np.where(nbrs == prev, 1.0 / P, np.where(adj[prev, nbrs], 1.0, 1.0 / Q))
    return nbrs, w / w.sum()


@numba.njit(cache=True)
def _walks(indptr, indices, adj, n, r, length, P, Q, seed):
    np.random.seed(seed)
    walks = np.empty((r * n, length), dtype=np.int64)
    buf = np.empty(n)
    row = 0
    for _ in range(r):
        for start in range(n):
            walks[row, 0] = start
            for step in range(1, length):
                cur = walks[row, step - 1]
                lo = indptr[cur]
                hi = indptr[cur + 1]
                deg = hi - lo
                if deg == 0:
                    walks[row, step] = cur
                    continue
                if step == 1:
                    walks[row, step] = indices[lo + int(np.random.random() * deg)]
                    continue
                prev = walks[row, step - 2]
                total = 0.0
                for k in range(deg):
                    x = indices[lo + k]
                    if x == prev:
                        wgt = 1.0 / P
                    elif adj[prev, x]:
                        wgt = 1.0
                    else:
                        wgt = 1.0 / Q
                    total += wgt
                    buf[k] = total
                u = np.random.random() * total
                k = 0
                while k < deg - 1 and buf[k] <= u:
                    k += 1
                walks[row, step] = indices[lo + k]
            row += 1
    return walks


def node2vec_walks(g: VisibilityGraph, cfg: Node2VecConfig) -> np.ndarray:
    """``walks_per_node`` rounds of one walk from every node; returns (r*n) x l node ids."""
    indptr, indices = g.csr()
    return _walks(indptr, indices, g.adjacency(), g.n, cfg.walks_per_node, cfg.walk_length,
                  float(cfg.P), float(cfg.Q), cfg.seed)


@numba.njit(cache=True)
def _sgns(walks, n, dim, window, negatives, epochs, lr0, seed):
    np.random.seed(seed)
    syn0 = (np.random.random((n, dim)) - 0.5) / dim
    syn1 = np.zeros((n, dim))
    # unigram^0.75 noise table over walk tokens
    freq = np.zeros(n)
    for w in walks.ravel():
        freq[w] += 1.0
    cdf = np.cumsum(freq ** 0.75)
    cdf /= cdf[-1]
    n_walks, length = walks.shape
    total_steps = max(1, epochs * n_walks * length)
    losses = np.zeros(epochs)
    grad = np.empty(dim)
    step = 0
    for ep in range(epochs):
        loss = 0.0
        pairs = 0
        for wi in range(n_walks):
            for pos in range(length):
                lr = lr0 * max(1e-4, 1.0 - step / total_steps)
                step += 1
                center = walks[wi, pos]
                for off in range(-window, window + 1):
                    cp = pos + off
                    if off == 0 or cp < 0 or cp >= length:
                        continue
                    ctx = walks[wi, cp]
                    grad[:] = 0.0
                    for k in range(negatives + 1):
                        if k == 0:
                            target = ctx
                            label = 1.0
                        else:
                            target = np.searchsorted(cdf, np.random.random(), side="right")
                            if target >= n:
                                target = n - 1
                            if target == ctx:
                                continue
                            label = 0.0
                        dot = 0.0
                        for d in range(dim):
                            dot += syn0[center, d] * syn1[target, d]
                        if dot > 30.0:
                            sig = 1.0
                        elif dot < -30.0:
                            sig = 0.0
                        else:
                            sig = 1.0 / (1.0 + np.exp(-dot))
                        if label == 1.0:
                            loss -= np.log(max(sig, 1e-300))
                        else:
                            loss -= np.log(max(1.0 - sig, 1e-300))
                        g = (label - sig) * lr
                        for d in range(dim):
                            grad[d] += g * syn1[target, d]
                            syn1[target, d] += g * syn0[center, d]
                    for d in range(dim):
                        syn0[center, d] += grad[d]
                    pairs += 1
        losses[ep] = loss / max(pairs, 1)
    return syn0, losses


def train_embedding(walks: np.ndarray, cfg: Node2VecConfig, n_nodes: int | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Skip-gram with negative sampling over walk windows.

    Returns (|V| x d node vectors, per-epoch mean loss).  Input vectors start
    uniform in [-0.5/d, 0.5/d]; the learning rate decays linearly to zero.
    Negative draws that hit the positive context are skipped.
    """
    walks = np.ascontiguousarray(walks, dtype=np.int64)
    if walks.ndim != 2 or walks.size == 0:
        raise DataError("walks must be a non-empty 2-d array of node ids")
    n = int(walks.max()) + 1 if n_nodes is None else n_nodes
    return _sgns(walks, n, cfg.dim, cfg.window, cfg.negatives, cfg.epochs,
                 cfg.learning_rate, cfg.seed)


def pool(vectors: np.ndarray, how: str = "mean") -> np.ndarray:
    if how == "mean":
        return vectors.mean(axis=0)
    if how == "max":
        return vectors.max(axis=0)
    raise ConfigError(f"unknown pooling {how!r}; use mean or max")


def embed_series(series, ssa_cfg: SsaConfig = SsaConfig(), n2v_cfg: Node2VecConfig = Node2VecConfig(),
                 pooling: str = "mean") -> np.ndarray:
    y = np.asarray(series, dtype=np.float64)
    clean = ssa_denoise(y, ssa_cfg.window, ssa_cfg.energy)
    g = visibility_graph(clean)
    walks = node2vec_walks(g, n2v_cfg)
    vectors, _ = train_embedding(walks, n2v_cfg, g.n)
    out = pool(vectors, pooling)
    if not np.all(np.isfinite(out)):
        raise DataError("graph embedding is not finite")
    return out


def embed_entity(panel: TimeSeriesPanel, entity: str, ssa_cfg: SsaConfig = SsaConfig(),
                 n2v_cfg: Node2VecConfig = Node2VecConfig(), pooling: str = "mean",
                 end: int | None = None) -> np.ndarray:
    """e'_i for one entity, built from values[:end] only."""
    return embed_series(panel.values[panel.index(entity), :end], ssa_cfg, n2v_cfg, pooling)


# ---------------------------------------------------------------------------
# panel-level embeddings and persistence


@dataclass
class GraphEmbedding:
    entities: list[str]
    vectors: np.ndarray  # N x d
    seed: int
    config: dict

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def config_hash(self) -> bytes:
        return hashlib.sha256(json.dumps(self.config, sort_keys=True).encode()).digest()


def embed_panel(panel: TimeSeriesPanel, ssa_cfg: SsaConfig = SsaConfig(),
                n2v_cfg: Node2VecConfig = Node2VecConfig(), pooling: str = "mean",
                end: int | None = None, n_jobs: int = 1) -> GraphEmbedding:
    rows = [panel.values[i, :end] for i in range(panel.n_entities)]
    if n_jobs > 1:
        from joblib import Parallel, delayed

        vecs = Parallel(n_jobs=n_jobs)(
            delayed(embed_series)(y, ssa_cfg, n2v_cfg, pooling) for y in rows)
    else:
        vecs = [embed_series(y, ssa_cfg, n2v_cfg, pooling) for y in rows]
    config = {"ssa": asdict(ssa_cfg), "node2vec": asdict(n2v_cfg), "pooling": pooling, "end": end}
    return GraphEmbedding(list(panel.entities), np.stack(vecs), n2v_cfg.seed, config)


def write_embeddings(path: str | Path, emb: GraphEmbedding) -> None:
    """Binary rows plus a JSON sidecar ``<stem>.meta.json``."""
    path = Path(path)
    n, d = emb.vectors.shape
    with path.open("wb") as fh:
        fh.write(HEADER.pack(n, d, emb.seed))
        fh.write(emb.config_hash())
        fh.write(np.ascontiguousarray(emb.vectors, dtype="<f8").tobytes())
    meta = {"entities": emb.entities, "config": emb.config, "seed": emb.seed,
            "config_hash": emb.config_hash().hex()}
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_embeddings(path: str | Path) -> GraphEmbedding:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER.size + HASH_BYTES:
        raise DataError(f"{path}: truncated embeddings file")
    n, d, seed = HEADER.unpack_from(raw)
    digest = raw[HEADER.size:HEADER.size + HASH_BYTES]
    body = raw[HEADER.size + HASH_BYTES:]
    if len(body) != n * d * 8:
        raise DataError(f"{path}: expected {n}x{d} float64 payload")
    vectors = np.frombuffer(body, dtype="<f8").reshape(n, d).copy()
    meta = json.loads(path.with_suffix(".meta.json").read_text())
    emb = GraphEmbedding(meta["entities"], vectors, seed, meta["config"])
    if emb.config_hash() != digest:
        raise DataError(f"{path}: config hash does not match the sidecar")
    return emb
