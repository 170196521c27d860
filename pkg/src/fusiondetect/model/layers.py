"""Forward and reverse-mode passes of the GT, GAT and GRU layers.

Every ``*_forward`` returns its output plus a cache; the matching ``*_backward``
takes that cache and the upstream gradient. Batched tensors put the batch
axis first and the snapshot axis second.
"""

from __future__ import annotations

import numpy as np


class GraphError(ArithmeticError):
    pass


# ------------------------------------------------------------------ GT layers

def gt_soft_select(A: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Q = sum_k w_k A^(k) for A stored as K x N x N."""
    A = np.asarray(A)
    w = np.asarray(w)
    if A.shape[0] != w.shape[0]:
        raise ValueError(f"{A.shape[0]} adjacency slices but {w.shape[0]} weights")
    return np.tensordot(w, A, axes=1)


def gt_compose(prev: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-normalized product D^-1 (prev @ Q)."""
    P = prev @ Q
    rows = P.sum(1)
    if np.any(rows <= 0):
        bad = np.flatnonzero(rows <= 0)
        raise GraphError(f"non-positive row sum in composed meta-path at rows {bad.tolist()}")
    return P / rows[:, None]


def gtn_forward(A: np.ndarray, w: np.ndarray):
    """Stack of GT layers; w is L x K. Returns (A', cache)."""
    N = A.shape[1]
    M = np.eye(N)
    cache = []
    for l in range(w.shape[0]):
        Q = gt_soft_select(A, w[l])
        M_next = gt_compose(M, Q)
        cache.append((M, Q, (M @ Q).sum(1), M_next))
        M = M_next
    return M, cache


def gtn_backward(A: np.ndarray, cache, dM: np.ndarray) -> np.ndarray:
    dw = np.zeros((len(cache), A.shape[0]))
    for l in range(len(cache) - 1, -1, -1):
        prev, Q, rows, M = cache[l]
        dP = (dM - (dM * M).sum(1, keepdims=True)) / rows[:, None]
        dQ = prev.T @ dP
        dM = dP @ Q.T
        dw[l] = np.tensordot(A, dQ, axes=([1, 2], [0, 1]))
    return dw


# ------------------------------------------------------------------ GAT

def leaky_relu(x, slope=0.2):
    return np.where(x > 0, x, slope * x)


def softmax(x, axis=-1):
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def lift_features(X: np.ndarray, mod: np.ndarray, lift_w: np.ndarray, lift_b: np.ndarray) -> np.ndarray:
    """Scalar node values (..., N) -> per-modality linear embedding (..., N, F)."""
    return X[..., None] * lift_w[mod] + lift_b[mod]


def gat_forward(f: np.ndarray, Ap: np.ndarray, W: np.ndarray, a: np.ndarray, WH: np.ndarray,
                slope: float = 0.2):
    """Multi-head graph attention over node features f (..., N, F).

    W: H x F x F', a: H x 2F', WH: H*F' x F''. Returns (X', cache) with
    X' shaped (..., N, F'').
    """
    H, _, Fp = W.shape
    z = np.einsum("...nf,hfg->...hng", f, W, optimize=True)
    s1 = z @ a[:, :Fp, None]  # (..., H, N, 1)
    s2 = z @ a[:, Fp:, None]
    e = s1 + np.swapaxes(s2, -1, -2)  # (..., H, N, N)
    u = Ap * e
    beta = leaky_relu(u, slope)
    alpha = softmax(beta, -1)
    o = alpha @ z  # (..., H, N, F')
    cat = np.swapaxes(o, -3, -2)
    cat = cat.reshape(cat.shape[:-2] + (H * Fp,))
    out = cat @ WH
    return out, (f, z, e, u, alpha, cat, Ap, W, a, WH, slope)


def gat_backward(cache, dout: np.ndarray):
    """Returns (df, dAp, dW, da, dWH)."""
    f, z, e, u, alpha, cat, Ap, W, a, WH, slope = cache
    H, _, Fp = W.shape
    lead = tuple(range(dout.ndim - 2))
    dWH = np.tensordot(cat, dout, axes=(lead + (dout.ndim - 2,), lead + (dout.ndim - 2,)))
    dcat = dout @ WH.T
    do = np.swapaxes(dcat.reshape(dcat.shape[:-1] + (H, Fp)), -3, -2)
    dalpha = do @ np.swapaxes(z, -1, -2)
    dz = np.swapaxes(alpha, -1, -2) @ do
    dbeta = alpha * (dalpha - (dalpha * alpha).sum(-1, keepdims=True))
    du = np.where(u > 0, dbeta, slope * dbeta)
    batch_axes = tuple(range(du.ndim - 2))
    dAp = (du * e).sum(axis=batch_axes)
    de = du * Ap
    ds1 = de.sum(-1)[..., None]
    ds2 = de.sum(-2)[..., None]
    dz = dz + ds1 * a[:, None, :Fp] + ds2 * a[:, None, Fp:]
    zaxes = tuple(range(z.ndim - 3))
    da1 = (ds1 * z).sum(axis=zaxes + (z.ndim - 2,))
    da2 = (ds2 * z).sum(axis=zaxes + (z.ndim - 2,))
    da = np.concatenate([da1, da2], axis=1)
    dW = np.einsum("...nf,...hng->hfg", f, dz, optimize=True)
    df = np.einsum("...hng,hfg->...nf", dz, W, optimize=True)
    return df, dAp, dW, da, dWH


# ------------------------------------------------------------------ GRU

def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(x: np.ndarray, p: dict, h0: np.ndarray | None = None):
    """x: (B, S, Din). Returns (hidden states (B, S, Dh), cache)."""
    B, S, _ = x.shape
    Dh = p["gru_Uz"].shape[0]
    h = np.zeros((B, Dh)) if h0 is None else h0
    xz = x @ p["gru_Wz"].T + p["gru_bz"]
    xr = x @ p["gru_Wr"].T + p["gru_br"]
    xh = x @ p["gru_Wh"].T + p["gru_bh"]
    hs = np.empty((B, S, Dh))
    steps = []
    for t in range(S):
        z = sigmoid(xz[:, t] + h @ p["gru_Uz"].T)
        r = sigmoid(xr[:, t] + h @ p["gru_Ur"].T)
        hr = h * r
        c = np.tanh(xh[:, t] + hr @ p["gru_Uh"].T)
        h_new = (1.0 - z) * h + z * c
        steps.append((h, z, r, hr, c))
        hs[:, t] = h_new
        h = h_new
    return hs, (x, steps)


def gru_backward(cache, p: dict, dh_last: np.ndarray, dhs: np.ndarray | None = None):
    """Backprop through time. Returns (dx, grads dict)."""
    x, steps = cache
    B, S, _ = x.shape
    g = {k: np.zeros_like(p[k]) for k in ("gru_Wz", "gru_Uz", "gru_bz", "gru_Wr", "gru_Ur",
                                          "gru_br", "gru_Wh", "gru_Uh", "gru_bh")}
    daz_all = np.empty((B, S, dh_last.shape[1]))
    dar_all = np.empty_like(daz_all)
    dac_all = np.empty_like(daz_all)
    dh = dh_last.copy()
    for t in range(S - 1, -1, -1):
        if dhs is not None:
            dh = dh + dhs[:, t]
        h, z, r, hr, c = steps[t]
        dz = dh * (c - h)
        dc = dh * z
        dh_prev = dh * (1.0 - z)
        dac = dc * (1.0 - c * c)
        dhr = dac @ p["gru_Uh"]
        dh_prev += dhr * r
        dr = dhr * h
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dh_prev += daz @ p["gru_Uz"] + dar @ p["gru_Ur"]
        g["gru_Uz"] += daz.T @ h
        g["gru_Ur"] += dar.T @ h
        g["gru_Uh"] += dac.T @ hr
        daz_all[:, t], dar_all[:, t], dac_all[:, t] = daz, dar, dac
        dh = dh_prev
    for gate, d in (("z", daz_all), ("r", dar_all), ("h", dac_all)):
        g[f"gru_W{gate}"] += np.tensordot(d, x, axes=([0, 1], [0, 1]))
        g[f"gru_b{gate}"] += d.sum((0, 1))
    dx = daz_all @ p["gru_Wz"] + dar_all @ p["gru_Wr"] + dac_all @ p["gru_Wh"]
    return dx, g


# ------------------------------------------------------------------ head and loss

def predict_last(h: np.ndarray, W_o: np.ndarray, b_o: np.ndarray) -> np.ndarray:
    return np.tanh(h @ W_o.T + b_o)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """(1/N)||pred - target||^2, averaged over any leading batch axes."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))
