import numpy as np
import pytest
from oracles import gradient_check, lstm_loop, propagate_oracle

from tsrec.errors import ConfigError, DataError, NumericalError
from tsrec.panel import RelationGraph
from tsrec.recommender import (
    RecommenderConfig,
    activation,
    build_windows,
    forward,
    init_model,
    joint_loss,
    load_model,
    normalize_rows,
    predict,
    propagate,
    save_model,
    sequential_embed,
    strength_explicit,
    strength_implicit,
    strength_size,
    train,
)

CLASSES = [f"m{k}" for k in range(4)]


def small_model(mode="Explicit", n_types=3, graph_dim=4, hidden=3, seq_len=5, n_inputs=2, **kw):
    cfg = RecommenderConfig(mode=mode, hidden=hidden, seq_len=seq_len, **kw)
    return init_model(cfg, n_inputs, n_types, graph_dim, CLASSES)


def test_zero_cell_gives_zero_embedding():
    p = {"Wx": np.zeros((2, 12)), "Wh": np.zeros((3, 12)), "b": np.zeros(12)}
    X = np.random.default_rng(0).normal(size=(4, 5, 2))
    assert np.all(sequential_embed(X, p) == 0.0)


def test_lstm_matches_scalar_loop():
    rng = np.random.default_rng(1)
    model = small_model()
    p = {k: model.params[k] + 0.3 * rng.normal(size=model.params[k].shape) for k in ("Wx", "Wh", "b")}
    X = rng.normal(size=(3, 5, 2))
    X[2] = X[0]
    E = sequential_embed(X, p)
    np.testing.assert_allclose(E, lstm_loop(X, p), atol=1e-10)
    assert np.array_equal(E[0], E[2])


def test_sequential_embed_rejects_nan():
    model = small_model()
    with pytest.raises(DataError):
        sequential_embed(np.full((1, 5, 2), np.nan), model.params)


def test_strength_explicit_examples():
    e_i, e_j = np.array([1.0, 1.0]), np.array([1.0, 1.0])  # dot 2
    ep_i, ep_j = np.array([1.0, 2.0]), np.array([1.0, 1.0])  # dot 3
    a = np.array([1.0, 0.0])
    assert strength_explicit(e_i, e_j, ep_i, ep_j, a, np.array([0.25, 9.0]), 0.25) == pytest.approx(3.0)
    w0 = np.zeros(2)
    assert strength_explicit(e_i, e_j, ep_i, ep_j, a, w0, 0.0, "sigmoid") == pytest.approx(0.5 * 6)
    assert strength_explicit(np.array([1.0, 0.0]), np.array([0.0, 1.0]), ep_i, ep_j, a,
                             np.ones(2), 1.0) == 0.0


def test_strength_explicit_bilinear():
    rng = np.random.default_rng(2)
    e_i, e_j, ep_i, ep_j, a, w = (rng.normal(size=4) for _ in range(6))
    base = strength_explicit(e_i, e_j, ep_i, ep_j, a, w, 0.1)
    assert strength_explicit(2.5 * e_i, e_j, ep_i, ep_j, a, w, 0.1) == pytest.approx(2.5 * base)
    assert strength_explicit(e_i, -3 * e_j, ep_i, ep_j, a, w, 0.1) == pytest.approx(-3 * base)


def test_strength_implicit_examples():
    rng = np.random.default_rng(3)
    U, d, K = 3, 4, 2
    e_i, e_j = rng.normal(size=U), rng.normal(size=U)
    ep_i, ep_j = rng.normal(size=d), rng.normal(size=d)
    a = np.array([1.0, 1.0])
    n_w = strength_size("Implicit", U, d, K)
    assert n_w == 2 * U + 2 * d + K
    assert strength_implicit(e_i, e_j, ep_i, ep_j, a, np.zeros(n_w), 0.7, "tanh") == pytest.approx(np.tanh(0.7))
    w1, w2, w3 = rng.normal(size=U), rng.normal(size=d), rng.normal(size=K)
    tied = np.concatenate([w1, w1, w2, w2, w3])
    assert strength_implicit(e_i, e_j, ep_i, ep_j, a, tied, 0.2) == pytest.approx(
        strength_implicit(e_j, e_i, ep_j, ep_i, a, tied, 0.2), rel=1e-12)
    w = rng.normal(size=n_w)
    x = list(e_i) + list(e_j) + list(ep_i) + list(ep_j) + list(a)
    acc = 0.3
    for wk, xk in zip(w, x):
        acc += wk * xk
    expect = acc if acc >= 0 else 0.01 * acc
    assert strength_implicit(e_i, e_j, ep_i, ep_j, a, w, 0.3) == pytest.approx(expect, rel=1e-12, abs=1e-12)
    with pytest.raises(ConfigError):
        strength_implicit(e_i, e_j, ep_i, ep_j, a, w[:-1], 0.3)


def test_activations():
    for name in ("leaky_relu", "sigmoid", "tanh"):
        f, df = activation(name)
        z = np.linspace(-2, 2, 9) + 0.05
        np.testing.assert_allclose(df(z), (f(z + 1e-6) - f(z - 1e-6)) / 2e-6, rtol=1e-5)
    assert activation("leaky_relu")[0](np.array([-1.0]))[0] == -0.01
    with pytest.raises(ConfigError):
        activation("relu6")


def chain_graph():
    # e0-e1 share type 0; e2 alone; e3, e4 share type 1 with e1
    m = np.array([[1, 0], [1, 1], [0, 0], [0, 1], [0, 1]], dtype=np.uint8)
    return RelationGraph(m)


def test_propagate_single_and_equal_neighbours():
    g = chain_graph()
    rng = np.random.default_rng(4)
    E, Ep = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))
    p = {"w": np.zeros(2), "bs": np.zeros(1)}
    R = propagate(E, Ep, g, p, "Explicit")
    assert np.array_equal(R[0], E[1])  # single neighbour
    assert np.all(R[2] == 0.0)  # no relations
    # implicit with w=0 gives equal strengths: uniform average
    w = np.zeros(strength_size("Implicit", 3, 4, 2))
    R = propagate(E, Ep, g, {"w": w, "bs": np.array([0.4])}, "Implicit")
    np.testing.assert_allclose(R[3], (E[1] + E[4]) / 2, rtol=1e-12)


@pytest.mark.parametrize("mode", ["Explicit", "Implicit"])
def test_propagate_matches_pair_oracle(mode):
    rng = np.random.default_rng(5)
    m = (rng.random((5, 3)) < 0.5).astype(np.uint8)
    m[4] = 0
    g = RelationGraph(m)
    E, Ep = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))
    w = rng.normal(size=strength_size(mode, 3, 4, 3))
    b = 0.2
    fn = strength_explicit if mode == "Explicit" else strength_implicit
    oracle, weights = propagate_oracle(
        E, Ep, m, lambda i, j: fn(E[i], E[j], Ep[i], Ep[j], g.adjacency[j, i].astype(float), w, b))
    R, alpha = propagate(E, Ep, g, {"w": w, "bs": np.array([b])}, mode, return_alpha=True)
    np.testing.assert_allclose(R, oracle, atol=1e-10)
    np.testing.assert_allclose(alpha, weights, atol=1e-12)


def test_softmax_weights_sum_to_one_on_50_entities():
    rng = np.random.default_rng(6)
    m = (rng.random((50, 6)) < 0.15).astype(np.uint8)
    g = RelationGraph(m)
    E, Ep = rng.normal(size=(50, 8)), rng.normal(size=(50, 5))
    R, alpha = propagate(E, Ep, g, {"w": rng.normal(size=6), "bs": np.zeros(1)}, return_alpha=True)
    has = g.related.any(axis=1)
    np.testing.assert_allclose(alpha[has].sum(axis=1), 1.0, atol=1e-6)
    assert np.all(R[~has] == 0.0)


@pytest.mark.parametrize("mode", ["Explicit", "Implicit"])
@pytest.mark.parametrize("phi", ["leaky_relu", "sigmoid", "tanh"])
def test_gradient_check(mode, phi):
    worst = gradient_check(mode, phi)
    assert all(v <= 1e-4 for v in worst.values()), worst


def test_zero_heads_and_shift_invariance():
    g = chain_graph()
    model = small_model(n_types=2)
    for k in ("Wc", "bc", "wr", "br"):
        model.params[k][...] = 0.0
    X = np.random.default_rng(7).normal(size=(5, 5, 2))
    Ep = np.random.default_rng(8).normal(size=(5, 4))
    logits, yhat = forward(X, Ep, g, model)
    assert np.all(logits == 0.0) and np.all(yhat == 0.0)
    model = small_model(n_types=2)
    a, _ = predict(X, Ep, g, model)
    model.params["bc"] += 5.0
    b, _ = predict(X, Ep, g, model)
    assert np.array_equal(a, b)


def test_joint_loss_matches_scalar_oracle():
    rng = np.random.default_rng(9)
    logits, yhat, y = rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=3)
    labels = np.array([0, 3, 1])
    ce = 0.0
    for r, lab in zip(logits, labels):
        ce += -np.log(np.exp(r[lab]) / np.exp(r).sum())
    expect = ce / 3 + 0.7 * sum((a - b) ** 2 for a, b in zip(yhat, y)) / 3
    assert joint_loss(logits, yhat, labels, y, 0.7) == pytest.approx(expect, rel=1e-12)


def toy_problem(n=20):
    """Two classes carried by orthogonal graph embeddings and opposite inputs."""
    cls = np.arange(n) % 2
    X = np.zeros((n, 5, 2))
    X[:, :, 0] = np.where(cls == 0, 1.0, -1.0)[:, None]
    Ep = np.zeros((n, 4))
    Ep[cls == 0, 0] = 1.0
    Ep[cls == 1, 1] = 1.0
    g = RelationGraph(np.zeros((n, 1), dtype=np.uint8))
    return X, np.zeros(n), cls, Ep, g


def test_lambda_zero_separable_toy_reaches_full_accuracy():
    X, y, cls, Ep, g = toy_problem()
    cfg = RecommenderConfig(hidden=4, seq_len=5, batch_size=4, epochs=60, learning_rate=0.1, lam=0.0)
    model = train(X, y, cls, Ep, g, cfg, ["a", "b"])
    pred, _ = predict(X, Ep, g, model)
    assert np.array_equal(pred, cls)
    # 10-epoch moving average of the loss never rises
    ma = np.convolve(model.train_log, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(ma) <= 1e-12)


def test_zero_learning_rate_leaves_params():
    X, y, cls, Ep, g = toy_problem()
    cfg = RecommenderConfig(hidden=4, seq_len=5, batch_size=4, epochs=3, learning_rate=0.0)
    model = train(X, y, cls, Ep, g, cfg, ["a", "b"])
    ref = init_model(cfg, 2, 1, 4, ["a", "b"])
    for k, v in ref.params.items():
        assert np.array_equal(v, model.params[k])
    with pytest.raises(ConfigError):
        RecommenderConfig(learning_rate=-0.1)


def test_training_reproducible_and_checkpoint_roundtrip(tmp_path):
    X, y, cls, Ep, g = toy_problem()
    cfg = RecommenderConfig(mode="Implicit", hidden=3, seq_len=5, batch_size=8, epochs=4, seed=3)
    a = train(X, y, cls, Ep, g, cfg, ["a", "b"])
    b = train(X, y, cls, Ep, g, cfg, ["a", "b"])
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert a.train_log == b.train_log
    save_model(a, tmp_path / "m", {"cutoff": 10})
    back, meta = load_model(tmp_path / "m")
    assert meta["cutoff"] == 10 and back.config == cfg and back.classes == ["a", "b"]
    assert np.array_equal(predict(X, Ep, g, back)[1], predict(X, Ep, g, a)[1])


@pytest.mark.filterwarnings("ignore:overflow")
def test_divergence_raises_with_last_finite_model():
    X, y, cls, Ep, g = toy_problem()
    y = np.full(y.shape, 1e200)  # squared error overflows on the first batch
    cfg = RecommenderConfig(hidden=3, seq_len=5, batch_size=4, epochs=2)
    with pytest.raises(NumericalError) as info:
        train(X, y, cls, Ep, g, cfg, ["a", "b"])
    assert all(np.all(np.isfinite(v)) for v in info.value.model.params.values())


def test_build_windows_normalisation():
    rng = np.random.default_rng(10)
    values = rng.normal(size=(2, 40)).cumsum(axis=1) + 50
    feats = np.stack([values, np.full_like(values, 50.0)], axis=2)  # one level, one rsi
    w = build_windows(values, feats, ["ma5", "rsi14"], end=30, seq_len=10)
    v = values[:, 20:30]
    np.testing.assert_allclose(w.X[:, :, 0], (v - v.mean(1, keepdims=True)) / v.std(1, keepdims=True))
    np.testing.assert_allclose(w.X[:, :, 1], w.X[:, :, 0])
    assert np.all(w.X[:, :, 2] == 0.5)
    np.testing.assert_allclose(w.y_next, (values[:, 30] - v.mean(1)) / v.std(1))
    with pytest.raises(ConfigError):
        build_windows(values, feats, ["ma5", "rsi14"], end=5, seq_len=10)


def test_normalize_rows():
    out = normalize_rows(np.array([[3.0, 4.0], [0.0, 0.0]]))
    assert np.allclose(out, [[0.6, 0.8], [0.0, 0.0]])
