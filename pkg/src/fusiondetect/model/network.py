"""GTN -> GAT -> GRU next-snapshot predictor with exact analytic gradients."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from ..graphstream import K_EDGE_TYPES, GraphStream
from ..serialize.channels import MODALITY_INDEX, Modality
from . import layers

PARAM_ORDER = ("gt_w", "lift_w", "lift_b", "gat_W", "gat_a", "gat_WH",
               "gru_Wz", "gru_Uz", "gru_bz", "gru_Wr", "gru_Ur", "gru_br",
               "gru_Wh", "gru_Uh", "gru_bh", "out_W", "out_b")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    layers: int = 5  # GT layers
    heads: int = 6
    hidden: int = 64
    batch_size: int = 32
    seed: int = 0
    feature_dim: int = 8  # per-node lift of the scalar channel value
    head_dim: int = 8
    out_dim: int = 1  # filtered features per node fed to the GRU
    leaky_slope: float = 0.2
    windows_per_epoch: int | None = None  # random subset per epoch; None uses all

    def __post_init__(self):
        for name in ("epochs",):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("layers", "heads", "hidden", "batch_size", "feature_dim", "head_dim", "out_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: TrainConfig, n_nodes: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    L, H, F, Fp, Fo, Dh = (config.layers, config.heads, config.feature_dim, config.head_dim,
                           config.out_dim, config.hidden)
    Din = n_nodes * Fo
    p = {
        "gt_w": np.full((L, K_EDGE_TYPES), 1.0 / K_EDGE_TYPES),
        "lift_w": _glorot(rng, (3, F), 1, F),
        "lift_b": np.zeros((3, F)),
        "gat_W": _glorot(rng, (H, F, Fp), F, Fp),
        "gat_a": _glorot(rng, (H, 2 * Fp), 2 * Fp, 1),
        "gat_WH": _glorot(rng, (H * Fp, Fo), H * Fp, Fo),
    }
    for gate in ("z", "r", "h"):
        p[f"gru_W{gate}"] = _glorot(rng, (Dh, Din), Din, Dh)
        p[f"gru_U{gate}"] = _glorot(rng, (Dh, Dh), Dh, Dh)
        p[f"gru_b{gate}"] = np.zeros(Dh)
    p["out_W"] = _glorot(rng, (n_nodes, Dh), Dh, n_nodes)
    p["out_b"] = np.zeros(n_nodes)
    return {k: p[k] for k in PARAM_ORDER}


def modality_index(modalities: Sequence) -> np.ndarray:
    return np.array([MODALITY_INDEX[Modality(m)] for m in modalities], dtype=int)


@dataclass
class Forward:
    prediction: np.ndarray  # (B, N)
    filtered: np.ndarray  # (B, theta-1, N*Fo) GRU inputs
    meta_path: np.ndarray  # (N, N)
    attention: np.ndarray  # (B, theta-1, H, N, N)
    cache: tuple = field(repr=False, default=())


def forward_batch(params: dict, A: np.ndarray, mod: np.ndarray, windows: np.ndarray,
                  slope: float = 0.2) -> Forward:
    """windows: (B, theta, N) raw node values; predicts the last snapshot from the others."""
    B, T, N = windows.shape
    if T < 2:
        raise ValueError("window length must be >= 2")
    Ap, gt_cache = layers.gtn_forward(A, params["gt_w"])
    X = windows[:, :-1, :]
    f = layers.lift_features(X, mod, params["lift_w"], params["lift_b"])
    Xp, gat_cache = layers.gat_forward(f, Ap, params["gat_W"], params["gat_a"], params["gat_WH"], slope)
    x_seq = Xp.reshape(B, T - 1, -1)
    hs, gru_cache = layers.gru_forward(x_seq, params)
    h_last = hs[:, -1]
    y = layers.predict_last(h_last, params["out_W"], params["out_b"])
    return Forward(y, x_seq, Ap, gat_cache[4], (gt_cache, X, gat_cache, gru_cache, h_last, Xp.shape))


def loss_and_grads(params: dict, A: np.ndarray, mod: np.ndarray, windows: np.ndarray,
                   slope: float = 0.2) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Batch-mean MSE of last-snapshot prediction and its gradient for every parameter."""
    fw = forward_batch(params, A, mod, windows, slope)
    gt_cache, X, gat_cache, gru_cache, h_last, xp_shape = fw.cache
    target = windows[:, -1, :]
    B, N = target.shape
    diff = fw.prediction - target
    loss = float(np.mean(diff ** 2))

    grads = {}
    dpre = (2.0 / (B * N)) * diff * (1.0 - fw.prediction ** 2)
    grads["out_W"] = dpre.T @ h_last
    grads["out_b"] = dpre.sum(0)
    dh = dpre @ params["out_W"]
    dx_seq, g = layers.gru_backward(gru_cache, params, dh)
    grads.update(g)
    df, dAp, dW, da, dWH = layers.gat_backward(gat_cache, dx_seq.reshape(xp_shape))
    grads["gat_W"], grads["gat_a"], grads["gat_WH"] = dW, da, dWH
    onehot = np.zeros((N, 3))
    onehot[np.arange(N), mod] = 1.0
    grads["lift_w"] = onehot.T @ (df * X[..., None]).sum((0, 1))
    grads["lift_b"] = onehot.T @ df.sum((0, 1))
    grads["gt_w"] = layers.gtn_backward(A, gt_cache, dAp)
    return loss, {k: grads[k] for k in PARAM_ORDER}, fw.prediction


def permute_channels(params: dict, perm: Sequence[int], out_dim: int = 1) -> dict:
    """Parameters of the same network with nodes reordered as ``new[i] = old[perm[i]]``."""
    perm = np.asarray(perm)
    cols = (perm[:, None] * out_dim + np.arange(out_dim)).ravel()
    p = {k: v.copy() for k, v in params.items()}
    for gate in ("z", "r", "h"):
        p[f"gru_W{gate}"] = params[f"gru_W{gate}"][:, cols]
    p["out_W"] = params["out_W"][perm]
    p["out_b"] = params["out_b"][perm]
    return p
