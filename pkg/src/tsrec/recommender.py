"""Relational recommender: recurrent sequence embeddings, relation-strength
propagation over the entity graph, and joint classification/regression heads.

For target entity i with related set N(i) the relational embedding is

    R_i = sum_j alpha_ji e_j,   alpha_ji = softmax_{j in N(i)} g(e_i, e_j, e'_i, e'_j, a_ji)

where g is either the explicit form (e_i.e_j)(e'_i.e'_j) phi(w.a_ji + b) or the
implicit form phi(w.[e_i; e_j; e'_i; e'_j; a_ji] + b).  Both heads read
[E_i; R_i; e'_i].  Every gradient is written out by hand.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from tsrec.errors import ConfigError, DataError, NumericalError
from tsrec.features import LEVEL_FEATURES, SCALE_FEATURES
from tsrec.lstm import Adam, clip_by_global_norm, init_lstm, lstm_backward, lstm_forward
from tsrec.panel import RelationGraph

logger = logging.getLogger(__name__)

MODES = ("Explicit", "Implicit")
CELL_KEYS = ("Wx", "Wh", "b")
HEAD_KEYS = ("Wc", "bc", "wr", "br")
LEAK = 0.01


# ---------------------------------------------------------------------------
# activations


def activation(name: str):
    """(phi, phi') pair for the strength function."""
    if name == "leaky_relu":
        return (lambda z: np.where(z >= 0, z, LEAK * z),
                lambda z: np.where(z >= 0, 1.0, LEAK))
    if name == "sigmoid":
        def sig(z):
            return 0.5 * (1.0 + np.tanh(0.5 * z))
        return sig, lambda z: sig(z) * (1.0 - sig(z))
    if name == "tanh":
        return np.tanh, lambda z: 1.0 - np.tanh(z) ** 2
    raise ConfigError(f"unknown activation {name!r}; use leaky_relu, sigmoid or tanh")


# ---------------------------------------------------------------------------
# configuration and model


@dataclass(frozen=True)
class RecommenderConfig:
    mode: str = "Explicit"
    hidden: int = 64
    seq_len: int = 128
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 0.01
    activation: str = "leaky_relu"
    lam: float = 0.5
    clip: float = 5.0
    optimizer: str = "sgd"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.hidden, self.seq_len, self.batch_size) < 1:
            raise ConfigError("hidden, seq_len and batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer must be sgd or adam")
        activation(self.activation)


@dataclass
class RecommenderModel:
    config: RecommenderConfig
    params: dict[str, np.ndarray]
    classes: list[str]
    n_inputs: int
    n_relation_types: int
    graph_dim: int
    train_log: list[float] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def strength_size(mode: str, hidden: int, graph_dim: int, n_types: int) -> int:
    return n_types if mode == "Explicit" else 2 * hidden + 2 * graph_dim + n_types


def init_model(cfg: RecommenderConfig, n_inputs: int, n_types: int, graph_dim: int,
               classes: list[str]) -> RecommenderModel:
    rng = np.random.default_rng(cfg.seed)
    U = cfg.hidden
    p = init_lstm(n_inputs, U, rng)
    ws = strength_size(cfg.mode, U, graph_dim, n_types)
    p["w"] = rng.uniform(-1.0, 1.0, ws) / np.sqrt(ws)
    p["bs"] = np.zeros(1)
    h_in = 2 * U + graph_dim
    bound = 1.0 / np.sqrt(h_in)
    p["Wc"] = rng.uniform(-bound, bound, (h_in, len(classes)))
    p["bc"] = np.zeros(len(classes))
    p["wr"] = rng.uniform(-bound, bound, h_in)
    p["br"] = np.zeros(1)
    return RecommenderModel(cfg, p, list(classes), n_inputs, n_types, graph_dim)


# ---------------------------------------------------------------------------
# single-pair definitions


def sequential_embed(windows: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
    """Last LSTM hidden state for each entity's S x (1+F) window."""
    X = np.asarray(windows, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if not np.all(np.isfinite(X)):
        raise DataError("sequence windows contain non-finite values")
    return lstm_forward(X, params)[0]


def strength_explicit(e_i, e_j, ep_i, ep_j, a_ji, w, b, phi: str = "leaky_relu") -> float:
    f, _ = activation(phi)
    return float(np.dot(e_i, e_j) * np.dot(ep_i, ep_j) * f(np.dot(w, a_ji) + b))


def strength_implicit(e_i, e_j, ep_i, ep_j, a_ji, w, b, phi: str = "leaky_relu") -> float:
    f, _ = activation(phi)
    x = np.concatenate([e_i, e_j, ep_i, ep_j, a_ji])
    if x.size != np.size(w):
        raise ConfigError(f"implicit weight length {np.size(w)} does not match input {x.size}")
    return float(f(np.dot(w, x) + b))


# ---------------------------------------------------------------------------
# batched relation step


def relation_pairs(graph: RelationGraph, targets: np.ndarray):
    """(row in targets, source entity j, a_ji) for every related pair, rows ascending."""
    mask = graph.related[targets]
    rows, cols = np.nonzero(mask)
    A = graph.adjacency[cols, targets[rows]].astype(np.float64)
    return rows, cols, A


def _strengths(E, Ep, targets, rows, cols, A, p, mode, phi):
    f, _ = activation(phi)
    w, b = p["w"], p["bs"][0]
    ti = targets[rows]
    if mode == "Explicit":
        s1 = np.einsum("pu,pu->p", E[ti], E[cols])
        s2 = np.einsum("pd,pd->p", Ep[ti], Ep[cols])
        z = A @ w + b
        return s1 * s2 * f(z), {"s1": s1, "s2": s2, "z": z}
    U, d = E.shape[1], Ep.shape[1]
    w1, w2 = w[:U], w[U:2 * U]
    w3, w4 = w[2 * U:2 * U + d], w[2 * U + d:2 * U + 2 * d]
    w5 = w[2 * U + 2 * d:]
    # affine in the concatenation, so project per entity then gather
    pe_i, pe_j = E @ w1, E @ w2
    pg_i, pg_j = Ep @ w3, Ep @ w4
    z = pe_i[ti] + pe_j[cols] + pg_i[ti] + pg_j[cols] + A @ w5 + b
    return f(z), {"z": z}


def _softmax_rows(G, present):
    """Row softmax over the present entries; rows with no entries stay zero."""
    Gm = np.where(present, G, -np.inf)
    m = Gm.max(axis=1, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    ex = np.where(present, np.exp(Gm - m), 0.0)
    s = ex.sum(axis=1, keepdims=True)
    return np.divide(ex, s, out=np.zeros_like(ex), where=s > 0)


def propagate(E, Ep, graph: RelationGraph, params: dict[str, np.ndarray], mode: str = "Explicit",
              phi: str = "leaky_relu", targets=None, return_alpha: bool = False):
    """Relational embeddings R for ``targets`` (default: every entity)."""
    E = np.asarray(E, dtype=np.float64)
    Ep = np.asarray(Ep, dtype=np.float64)
    n = E.shape[0]
    targets = np.arange(n) if targets is None else np.asarray(targets, dtype=np.int64)
    R, cache = _propagate(E, Ep, graph, params, mode, phi, targets)
    return (R, cache["alpha"]) if return_alpha else R


def _propagate(E, Ep, graph, p, mode, phi, targets):
    rows, cols, A = relation_pairs(graph, targets)
    g, sc = _strengths(E, Ep, targets, rows, cols, A, p, mode, phi)
    B, n = targets.size, E.shape[0]
    present = np.zeros((B, n), dtype=bool)
    present[rows, cols] = True
    G = np.zeros((B, n))
    G[rows, cols] = g
    alpha = _softmax_rows(G, present)
    R = alpha @ E
    return R, {"rows": rows, "cols": cols, "A": A, "g": g, "alpha": alpha, **sc}


def _propagate_backward(dR, E, Ep, targets, p, mode, phi, cache):
    """Gradients w.r.t. E (full N x U) and the strength parameters."""
    _, dphi = activation(phi)
    rows, cols, A, alpha = cache["rows"], cache["cols"], cache["A"], cache["alpha"]
    dE = alpha.T @ dR
    dAlpha = dR @ E.T
    inner = (alpha * dAlpha).sum(axis=1)
    a_p = alpha[rows, cols]
    dg = a_p * (dAlpha[rows, cols] - inner[rows])
    z = cache["z"]
    w, b = p["w"], p["bs"][0]
    ti = targets[rows]
    B, n = targets.size, E.shape[0]
    if mode == "Explicit":
        fz = activation(phi)[0](z)
        ds1 = dg * cache["s2"] * fz
        D = np.zeros((B, n))
        D[rows, cols] = ds1
        np.add.at(dE, targets, D @ E)
        dE += D.T @ E[targets]
        dz = dg * cache["s1"] * cache["s2"] * dphi(z)
        return dE, {"w": A.T @ dz, "bs": np.array([dz.sum()])}
    U, d = E.shape[1], Ep.shape[1]
    dz = dg * dphi(z)
    r = np.bincount(ti, weights=dz, minlength=n)
    c = np.bincount(cols, weights=dz, minlength=n)
    dE += np.outer(r, w[:U]) + np.outer(c, w[U:2 * U])
    dw = np.concatenate([E.T @ r, E.T @ c, Ep.T @ r, Ep.T @ c, A.T @ dz])
    return dE, {"w": dw, "bs": np.array([dz.sum()])}


# ---------------------------------------------------------------------------
# forward, loss and backward


def forward(X, Ep, graph: RelationGraph, model: RecommenderModel, targets=None, return_cache=False):
    """(class logits, next-value prediction) for ``targets``.

    ``X`` holds the windows of every entity because relational embeddings
    draw on neighbours outside the target set.
    """
    cfg, p = model.config, model.params
    n = X.shape[0]
    targets = np.arange(n) if targets is None else np.asarray(targets, dtype=np.int64)
    if not np.all(np.isfinite(X)):
        raise DataError("sequence windows contain non-finite values")
    involved = np.union1d(targets, np.flatnonzero(graph.related[targets].any(axis=0)))
    h, lcache = lstm_forward(X[involved], {k: p[k] for k in CELL_KEYS})
    E = np.zeros((n, cfg.hidden))
    E[involved] = h
    R, pcache = _propagate(E, Ep, graph, p, cfg.mode, cfg.activation, targets)
    H = np.concatenate([E[targets], R, Ep[targets]], axis=1)
    logits = H @ p["Wc"] + p["bc"]
    yhat = H @ p["wr"] + p["br"][0]
    if not return_cache:
        return logits, yhat
    return logits, yhat, {"E": E, "H": H, "involved": involved, "lstm": lcache,
                          "prop": pcache, "targets": targets}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def joint_loss(logits, yhat, labels, y, lam):
    """Mean cross-entropy plus lam times mean squared error."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    ce = -logp[np.arange(len(labels)), labels].mean()
    return float(ce + lam * np.mean((yhat - y) ** 2))


def loss_and_grads(X, Ep, graph, model, targets, labels, y):
    cfg, p = model.config, model.params
    logits, yhat, c = forward(X, Ep, graph, model, targets, return_cache=True)
    loss = joint_loss(logits, yhat, labels, y, cfg.lam)
    B = len(targets)
    dlogits = softmax(logits)
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    dy = 2.0 * cfg.lam * (yhat - y) / B
    H = c["H"]
    grads = {"Wc": H.T @ dlogits, "bc": dlogits.sum(axis=0), "wr": H.T @ dy, "br": np.array([dy.sum()])}
    dH = dlogits @ p["Wc"].T + np.outer(dy, p["wr"])
    U = cfg.hidden
    dE_direct, dR = dH[:, :U], dH[:, U:2 * U]
    E = c["E"]
    dE, gs = _propagate_backward(dR, E, Ep, c["targets"], p, cfg.mode, cfg.activation, c["prop"])
    np.add.at(dE, c["targets"], dE_direct)
    grads.update(gs)
    grads.update(lstm_backward(dE[c["involved"]], c["lstm"], {k: p[k] for k in CELL_KEYS}))
    return loss, grads


# ---------------------------------------------------------------------------
# training


def train(X, y, labels, Ep, graph: RelationGraph, cfg: RecommenderConfig, classes: list[str],
          train_idx=None) -> RecommenderModel:
    """Mini-batch training of the joint loss on the entities in ``train_idx``.

    ``X`` is N x S x n_in, or W x N x S x n_in for W window end points per
    entity; ``y`` holds the matching normalised next values (N or W x N) and
    ``labels`` the class index per entity.  Each batch draws its targets from
    one window end point so neighbours are embedded at the same time.
    Entries outside ``train_idx`` never enter the loss.  A non-finite loss
    stops training and raises NumericalError carrying the last finite model.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 3:
        X, y = X[None], y[None]
    Ep = np.asarray(Ep, dtype=np.float64)
    n_win, n = X.shape[:2]
    if Ep.shape[0] != n or graph.n_entities != n or y.shape != (n_win, n):
        raise DataError("windows, targets, graph embeddings and relation graph must cover the same entities")
    if X.shape[2] != cfg.seq_len:
        raise DataError(f"window length {X.shape[2]} does not match seq_len {cfg.seq_len}")
    train_idx = np.arange(n) if train_idx is None else np.asarray(train_idx, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    model = init_model(cfg, X.shape[3], graph.n_relation_types, Ep.shape[1], classes)
    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(model.params, lr=cfg.learning_rate) if cfg.optimizer == "adam" else None
    for epoch in range(cfg.epochs):
        batches = []
        for w in range(n_win):
            order = train_idx[rng.permutation(train_idx.size)]
            batches += [(w, np.sort(order[k:k + cfg.batch_size]))
                        for k in range(0, order.size, cfg.batch_size)]
        total, count = 0.0, 0
        for b in rng.permutation(len(batches)):
            w, batch = batches[b]
            snapshot = {k: v.copy() for k, v in model.params.items()}
            loss, grads = loss_and_grads(X[w], Ep, graph, model, batch, labels[batch], y[w, batch])
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                model.params = snapshot
                err = NumericalError(f"loss diverged in epoch {epoch}")
                err.model = model
                raise err
            clip_by_global_norm(grads, cfg.clip)
            if opt is not None:
                opt.step(model.params, grads)
            else:
                for k, g in grads.items():
                    model.params[k] -= cfg.learning_rate * g
            total += loss * batch.size
            count += batch.size
        model.train_log.append(total / max(count, 1))
        logger.info("epoch %d loss %.6f", epoch, model.train_log[-1])
    return model


def predict(X, Ep, graph, model, targets=None) -> tuple[np.ndarray, np.ndarray]:
    """(class index per target, normalised next-value prediction)."""
    logits, yhat = forward(X, Ep, graph, model, targets)
    return logits.argmax(axis=1), yhat


# ---------------------------------------------------------------------------
# inputs


def normalize_rows(Ep: np.ndarray) -> np.ndarray:
    """Unit-length graph embeddings, so e'_i.e'_j is a cosine."""
    norms = np.linalg.norm(Ep, axis=1, keepdims=True)
    return np.divide(Ep, norms, out=np.zeros_like(Ep), where=norms > 0)


@dataclass
class WindowInputs:
    X: np.ndarray  # N x S x (1+F)
    y_next: np.ndarray  # N, normalised; NaN when ``end`` is the panel length
    mean: np.ndarray
    scale: np.ndarray
    end: int


def build_windows(values: np.ndarray, features: np.ndarray, names, end: int, seq_len: int,
                  n_clusters: int = 1) -> WindowInputs:
    """Per-entity normalised windows over [end-S, end) and the target at ``end``.

    Level channels are z-scored with the window's value mean and standard
    deviation, scale channels divided by that deviation, the cluster id mapped
    to [0, 1], RSI to [0, 1] and OBV z-scored on its own.
    """
    values = np.asarray(values, dtype=np.float64)
    start = end - seq_len
    if start < 0 or end > values.shape[1]:
        raise ConfigError(f"window [{start}, {end}) falls outside the series")
    v = values[:, start:end]
    mu = v.mean(axis=1)
    sd = v.std(axis=1)
    sd = np.where(sd > 0, sd, 1.0)
    chans = [(v - mu[:, None]) / sd[:, None]]
    for k, name in enumerate(names):
        f = features[:, start:end, k]
        if name in LEVEL_FEATURES:
            f = (f - mu[:, None]) / sd[:, None]
        elif name in SCALE_FEATURES:
            f = f / sd[:, None]
        elif name == "cluster":
            f = f / max(1, n_clusters - 1)
        elif name == "rsi14":
            f = f / 100.0
        elif name == "obv":
            m, s = f.mean(axis=1, keepdims=True), f.std(axis=1, keepdims=True)
            f = (f - m) / np.where(s > 0, s, 1.0)
        chans.append(f)
    X = np.stack(chans, axis=2)
    if not np.all(np.isfinite(X)):
        raise DataError("feature window overlaps the warm-up rows; use a shorter window or later end")
    y_next = (values[:, end] - mu) / sd if end < values.shape[1] else np.full(values.shape[0], np.nan)
    return WindowInputs(X, y_next, mu, sd, end)


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: RecommenderModel, out_dir: str | Path, extra_meta: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "model.npz", **model.params)
    meta = {"config": asdict(model.config), "classes": model.classes, "seed": model.config.seed,
            "n_inputs": model.n_inputs, "n_relation_types": model.n_relation_types,
            "graph_dim": model.graph_dim, "train_log": model.train_log, **(extra_meta or {})}
    (out / "model.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_model(in_dir: str | Path) -> tuple[RecommenderModel, dict]:
    src = Path(in_dir)
    try:
        meta = json.loads((src / "model.meta.json").read_text())
        with np.load(src / "model.npz") as z:
            params = {k: z[k].copy() for k in z.files}
    except FileNotFoundError as exc:
        raise DataError(f"missing checkpoint file: {exc.filename}") from None
    cfg = RecommenderConfig(**meta["config"])
    model = RecommenderModel(cfg, params, meta["classes"], meta["n_inputs"],
                             meta["n_relation_types"], meta["graph_dim"], meta["train_log"])
    return model, meta
