"""Single-layer LSTM cell with explicit backpropagation through time.

Shared by the recurrent forecaster and the recommender's sequential embedder.
Gate layout in the stacked weight matrices is ``[input, forget, output, candidate]``.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def init_lstm(n_in: int, n_hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(n_hidden)
    return {
        "Wx": rng.uniform(-bound, bound, size=(n_in, 4 * n_hidden)),
        "Wh": rng.uniform(-bound, bound, size=(n_hidden, 4 * n_hidden)),
        "b": np.zeros(4 * n_hidden),
    }


def lstm_forward(X: np.ndarray, p: dict[str, np.ndarray]) -> tuple[np.ndarray, dict]:
    """Run the cell over ``X`` (B x S x n_in); return last hidden state and a cache."""
    B, S, _ = X.shape
    U = p["Wh"].shape[0]
    h = np.zeros((B, U))
    c = np.zeros((B, U))
    xw = X @ p["Wx"] + p["b"]
    hs, cs, gates = [h], [c], []
    for t in range(S):
        z = xw[:, t] + h @ p["Wh"]
        i = sigmoid(z[:, :U])
        f = sigmoid(z[:, U:2 * U])
        o = sigmoid(z[:, 2 * U:3 * U])
        g = np.tanh(z[:, 3 * U:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates.append((i, f, o, g))
        hs.append(h)
        cs.append(c)
    return h, {"X": X, "hs": hs, "cs": cs, "gates": gates}


def lstm_backward(dh_last: np.ndarray, cache: dict, p: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Gradients of the cell parameters given d(loss)/d(last hidden state)."""
    X, hs, cs, gates = cache["X"], cache["hs"], cache["cs"], cache["gates"]
    B, S, _ = X.shape
    U = p["Wh"].shape[0]
    dWx = np.zeros_like(p["Wx"])
    dWh = np.zeros_like(p["Wh"])
    db = np.zeros_like(p["b"])
    dh = dh_last.copy()
    dc = np.zeros((B, U))
    dz = np.empty((B, 4 * U))
    for t in range(S - 1, -1, -1):
        i, f, o, g = gates[t]
        c, c_prev, h_prev = cs[t + 1], cs[t], hs[t]
        tc = np.tanh(c)
        dc = dc + dh * o * (1.0 - tc * tc)
        dz[:, :U] = dc * g * i * (1.0 - i)
        dz[:, U:2 * U] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * U:3 * U] = dh * tc * o * (1.0 - o)
        dz[:, 3 * U:] = dc * i * (1.0 - g * g)
        dWx += X[:, t].T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dh = dz @ p["Wh"].T
        dc = dc * f
    return {"Wx": dWx, "Wh": dWh, "b": db}


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * corr * self.m[k] / (np.sqrt(self.v[k]) + self.eps)
