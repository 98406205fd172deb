"""Forward and reverse-mode passes for the agent GRU network and the QMIX mixer.

Everything is float64 numpy. Parameters live in plain dicts of arrays so the
optimizer, checkpointing and finite-difference checks can treat them uniformly.
Gate order inside the GRU matrices is (reset, update, candidate).
"""

from __future__ import annotations

import numpy as np

N_ACTIONS = 2
OBS_DIM = 4


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def agent_input_dim(n_agents: int) -> int:
    return OBS_DIM + N_ACTIONS + n_agents


def init_agent(rng: np.random.Generator, n_agents: int, hidden: int) -> dict[str, np.ndarray]:
    d_in = agent_input_dim(n_agents)
    p = {}
    for layer, d in (("l1", d_in), ("l2", hidden)):
        p[f"{layer}_Wi"] = _uniform(rng, hidden, (d, 3 * hidden))
        p[f"{layer}_bi"] = _uniform(rng, hidden, (3 * hidden,))
        p[f"{layer}_Wh"] = _uniform(rng, hidden, (hidden, 3 * hidden))
        p[f"{layer}_bh"] = _uniform(rng, hidden, (3 * hidden,))
    p["out_W"] = _uniform(rng, hidden, (hidden, N_ACTIONS))
    p["out_b"] = _uniform(rng, hidden, (N_ACTIONS,))
    return p


def init_mixer(rng: np.random.Generator, n_agents: int, mixer_hidden: int) -> dict[str, np.ndarray]:
    s = n_agents * OBS_DIM
    m = mixer_hidden
    return {
        "hw1_W": _uniform(rng, s, (s, n_agents * m)), "hw1_b": _uniform(rng, s, (n_agents * m,)),
        "hb1_W": _uniform(rng, s, (s, m)), "hb1_b": _uniform(rng, s, (m,)),
        "hw2_W": _uniform(rng, s, (s, m)), "hw2_b": _uniform(rng, s, (m,)),
        "v1_W": _uniform(rng, s, (s, m)), "v1_b": _uniform(rng, s, (m,)),
        "v2_W": _uniform(rng, m, (m,)), "v2_b": _uniform(rng, m, ()),
    }


# -- GRU ------------------------------------------------------------------

def gru_cell(p, layer, x, h):
    H = h.shape[1]
    gi = x @ p[f"{layer}_Wi"] + p[f"{layer}_bi"]
    gh = h @ p[f"{layer}_Wh"] + p[f"{layer}_bh"]
    r = _sigmoid(gi[:, :H] + gh[:, :H])
    z = _sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
    ghn = gh[:, 2 * H:]
    n = np.tanh(gi[:, 2 * H:] + r * ghn)
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, r, z, n, ghn)


def gru_cell_backward(p, layer, dh_new, cache, grads):
    x, h, r, z, n, ghn = cache
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dn_pre = dn * (1.0 - n * n)
    dr = dn_pre * ghn
    dr_pre = dr * r * (1.0 - r)
    dz_pre = dz * z * (1.0 - z)
    dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
    dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
    grads[f"{layer}_Wi"] += x.T @ dgi
    grads[f"{layer}_bi"] += dgi.sum(0)
    grads[f"{layer}_Wh"] += h.T @ dgh
    grads[f"{layer}_bh"] += dgh.sum(0)
    dx = dgi @ p[f"{layer}_Wi"].T
    dh = dh + dgh @ p[f"{layer}_Wh"].T
    return dx, dh


def agent_step(p, x, hidden):
    """One recurrent step. ``hidden`` is (2, rows, H); returns (q, new_hidden, cache)."""
    h1, c1 = gru_cell(p, "l1", x, hidden[0])
    h2, c2 = gru_cell(p, "l2", h1, hidden[1])
    q = h2 @ p["out_W"] + p["out_b"]
    return q, np.stack([h1, h2]), (c1, c2, h2)


def agent_forward(p, X, hidden0=None):
    """Unroll over X of shape (T, rows, D). Returns Q (T, rows, 2) and caches."""
    T, R, _ = X.shape
    H = p["out_W"].shape[0]
    hidden = np.zeros((2, R, H)) if hidden0 is None else hidden0
    qs, caches = [], []
    for t in range(T):
        q, hidden, cache = agent_step(p, X[t], hidden)
        qs.append(q)
        caches.append(cache)
    return np.stack(qs), caches


def agent_backward(p, dQ, caches):
    """Backpropagate dQ (T, rows, 2) through time; returns grads dict."""
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    R, H = dQ.shape[1], p["out_W"].shape[0]
    dh1_next = np.zeros((R, H))
    dh2_next = np.zeros((R, H))
    for t in range(dQ.shape[0] - 1, -1, -1):
        c1, c2, h2 = caches[t]
        grads["out_W"] += h2.T @ dQ[t]
        grads["out_b"] += dQ[t].sum(0)
        dh2 = dQ[t] @ p["out_W"].T + dh2_next
        dx2, dh2_next = gru_cell_backward(p, "l2", dh2, c2, grads)
        _, dh1_next = gru_cell_backward(p, "l1", dx2 + dh1_next, c1, grads)
    return grads


# -- mixer ----------------------------------------------------------------

def mixer_forward(p, q, s):
    """Monotonic mix of per-agent values q (M, n) conditioned on states s (M, S)."""
    M, n = q.shape
    m = p["hb1_b"].shape[0]
    w1 = s @ p["hw1_W"] + p["hw1_b"]
    W1 = np.abs(w1).reshape(M, n, m)
    b1 = s @ p["hb1_W"] + p["hb1_b"]
    pre = np.einsum("mi,mij->mj", q, W1) + b1
    hid = np.where(pre > 0, pre, np.expm1(np.minimum(pre, 0.0)))
    w2 = s @ p["hw2_W"] + p["hw2_b"]
    W2 = np.abs(w2)
    v_pre = s @ p["v1_W"] + p["v1_b"]
    v_h = np.maximum(v_pre, 0.0)
    V = v_h @ p["v2_W"] + p["v2_b"]
    q_tot = (hid * W2).sum(1) + V
    return q_tot, (q, s, w1, W1, pre, hid, w2, W2, v_pre, v_h)


def mixer_backward(p, dq_tot, cache):
    """Returns (grads dict, dq) for upstream gradient dq_tot (M,)."""
    q, s, w1, W1, pre, hid, w2, W2, v_pre, v_h = cache
    M, n = q.shape
    g = {}
    dW2 = dq_tot[:, None] * hid
    dw2 = dW2 * np.sign(w2)
    g["hw2_W"] = s.T @ dw2
    g["hw2_b"] = dw2.sum(0)
    dhid = dq_tot[:, None] * W2
    dpre = dhid * np.where(pre > 0, 1.0, np.exp(np.minimum(pre, 0.0)))
    g["hb1_W"] = s.T @ dpre
    g["hb1_b"] = dpre.sum(0)
    dW1 = q[:, :, None] * dpre[:, None, :]
    dw1 = dW1.reshape(M, -1) * np.sign(w1)
    g["hw1_W"] = s.T @ dw1
    g["hw1_b"] = dw1.sum(0)
    dq = np.einsum("mj,mij->mi", dpre, W1)
    g["v2_W"] = v_h.T @ dq_tot
    g["v2_b"] = np.asarray(dq_tot.sum())
    dv_pre = dq_tot[:, None] * p["v2_W"][None, :] * (v_pre > 0)
    g["v1_W"] = s.T @ dv_pre
    g["v1_b"] = dv_pre.sum(0)
    return g, dq
