"""Model state, Adam training loop and binary checkpoints."""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..graphstream import GraphStream
from .network import PARAM_ORDER, Forward, TrainConfig, forward_batch, init_params, loss_and_grads

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"FDCKPT\x00\x01"
CHECKPOINT_VERSION = 1
ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelState:
    config: TrainConfig
    n_nodes: int
    theta: int
    modalities: np.ndarray  # node -> modality index
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int = 0
    loss_history: list[float] = field(default_factory=list)
    # fixed per-channel affine map into the network's working range: u = (x - center) / scale
    center: np.ndarray | None = None
    scale: np.ndarray | None = None

    @classmethod
    def initial(cls, config: TrainConfig, modalities, theta: int, center=None, scale=None) -> "ModelState":
        modalities = np.asarray(modalities, dtype=int)
        n = len(modalities)
        params = init_params(config, n)
        zeros = {k: np.zeros_like(v) for k, v in params.items()}
        center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        scale = np.ones(n) if scale is None else np.asarray(scale, dtype=float)
        return cls(config, n, theta, modalities, params, zeros,
                   {k: np.zeros_like(v) for k, v in params.items()}, center=center, scale=scale)

    def to_model_units(self, values: np.ndarray) -> np.ndarray:
        """Channel values (last axis = node) -> network coordinates."""
        return (values - self.center) / self.scale

    def from_model_units(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale + self.center

    def predict(self, A: np.ndarray, windows: np.ndarray) -> Forward:
        """Forward pass on raw channel windows; ``prediction`` is in channel units."""
        windows = np.asarray(windows, dtype=float)
        if windows.ndim != 3 or windows.shape[1:] != (self.theta, self.n_nodes):
            raise ValueError(f"expected windows of shape (B, {self.theta}, {self.n_nodes}), "
                             f"got {windows.shape}")
        fw = forward_batch(self.params, A, self.modalities, self.to_model_units(windows),
                           self.config.leaky_slope)
        fw.prediction = self.from_model_units(fw.prediction)
        return fw


def channel_scaling(X: np.ndarray, columns: slice | None = None, spread: float = 3.0,
                    floor: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Per-row mean and ``spread`` standard deviations over the chosen columns.

    Rows with (near) zero variance get scale 1 so constant channels pass through.
    """
    sub = X if columns is None else X[:, columns]
    center = sub.mean(axis=1)
    sd = sub.std(axis=1)
    scale = np.where(sd > floor, spread * sd, 1.0)
    return center, scale


def forward(stream: GraphStream, state: ModelState) -> Forward:
    """Prediction of the stream's last snapshot; pure in (stream, state)."""
    return state.predict(stream.adjacency.slices, stream.snapshots[None])


def adam_step(state: ModelState, grads: dict[str, np.ndarray]) -> None:
    state.step += 1
    lr = state.config.learning_rate
    c1 = 1.0 - ADAM_B1 ** state.step
    c2 = 1.0 - ADAM_B2 ** state.step
    for k in PARAM_ORDER:
        g = grads[k]
        state.adam_m[k] = ADAM_B1 * state.adam_m[k] + (1.0 - ADAM_B1) * g
        state.adam_v[k] = ADAM_B2 * state.adam_v[k] + (1.0 - ADAM_B2) * g * g
        state.params[k] = state.params[k] - lr * (state.adam_m[k] / c1) / (np.sqrt(state.adam_v[k] / c2) + ADAM_EPS)
    # GT selection weights stay non-negative so composed row sums remain positive
    w = np.maximum(state.params["gt_w"], 0.0)
    empty = w.sum(1) <= 0
    w[empty] = 1.0 / w.shape[1]
    state.params["gt_w"] = w


def training_windows(X: np.ndarray, ends, theta: int) -> np.ndarray:
    """(B, theta, N) windows of the N x tau matrix ending at the given columns."""
    view = sliding_window_view(X, theta, axis=1)  # N x (tau-theta+1) x theta
    ends = np.asarray(ends, dtype=int)
    if ends.size and (ends.min() < theta - 1 or ends.max() >= X.shape[1]):
        raise IndexError("window end outside the channel matrix")
    return np.ascontiguousarray(view[:, ends - theta + 1, :].transpose(1, 2, 0))


def train(X: np.ndarray, A: np.ndarray, modalities, window_ends, config: TrainConfig,
          theta: int, state: ModelState | None = None) -> ModelState:
    """Adam over shuffled windows of the N x tau channel matrix.

    A fresh state takes its channel scaling from the columns the training
    windows cover; losses are in those scaled units. Deterministic for fixed
    inputs and ``config.seed``. Appends one mean loss per epoch to
    ``state.loss_history``.
    """
    window_ends = np.asarray(window_ends, dtype=int)
    if window_ends.size == 0:
        raise TrainingError("no training windows")
    if state is None:
        span = slice(max(int(window_ends.min()) - theta + 1, 0), int(window_ends.max()) + 1)
        center, scale = channel_scaling(X, span)
        state = ModelState.initial(config, modalities, theta, center, scale)
    X = state.to_model_units(X.T).T
    rng = np.random.default_rng([config.seed, 1])
    for epoch in range(config.epochs):
        order = rng.permutation(window_ends)
        if config.windows_per_epoch is not None:
            order = order[: config.windows_per_epoch]
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            ends = order[start: start + config.batch_size]
            batch = training_windows(X, ends, theta)
            loss, grads, _ = loss_and_grads(state.params, A, state.modalities, batch, config.leaky_slope)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch + 1} on windows ending at {ends.tolist()}")
            adam_step(state, grads)
            total += loss * len(ends)
            count += len(ends)
        state.loss_history.append(total / count)
        log.debug("epoch %d loss %.6g", epoch + 1, state.loss_history[-1])
    return state


# ------------------------------------------------------------------ checkpoints
#
# Layout: 8-byte magic, uint32 version, uint32 header length, UTF-8 JSON header
# (config snapshot, metadata, and [name, shape] per tensor in storage order),
# then every tensor as little-endian float64 in row-major order. Tensors are
# params, then Adam first moments, then second moments, then the channel
# scaling buffers (center, scale).

def save_checkpoint(state: ModelState, path, extra: dict | None = None) -> None:
    tensors = []
    for prefix, group in (("param", state.params), ("adam_m", state.adam_m), ("adam_v", state.adam_v)):
        for k in PARAM_ORDER:
            tensors.append((f"{prefix}/{k}", group[k]))
    tensors += [("buffer/center", state.center), ("buffer/scale", state.scale)]
    header = {
        "config": asdict(state.config),
        "n_nodes": state.n_nodes,
        "theta": state.theta,
        "modalities": state.modalities.tolist(),
        "step": state.step,
        "loss_history": list(state.loss_history),
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelState, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    version, hlen = struct.unpack("<II", data[8:16])
    if version > CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version} is newer than {CHECKPOINT_VERSION}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    groups = {"param": {}, "adam_m": {}, "adam_v": {}, "buffer": {}}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape).astype(float)
        offset += 8 * n
        prefix, key = name.split("/", 1)
        groups[prefix][key] = arr
    state = ModelState(TrainConfig(**header["config"]), header["n_nodes"], header["theta"],
                       np.array(header["modalities"], dtype=int), groups["param"], groups["adam_m"],
                       groups["adam_v"], header["step"], list(header["loss_history"]),
                       groups["buffer"]["center"], groups["buffer"]["scale"])
    return state, header["extra"]
