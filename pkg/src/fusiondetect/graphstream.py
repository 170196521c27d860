"""Heterogeneous graph stream: typed mutual-information adjacency plus node snapshots."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .serialize.channels import Modality

K_EDGE_TYPES = 6
_PAIR_ORDER = [
    (Modality.METRIC, Modality.METRIC),
    (Modality.METRIC, Modality.LOG),
    (Modality.METRIC, Modality.TRACE),
    (Modality.LOG, Modality.LOG),
    (Modality.LOG, Modality.TRACE),
    (Modality.TRACE, Modality.TRACE),
]
EDGE_TYPE_OF = {}
for _k, (_a, _b) in enumerate(_PAIR_ORDER, start=1):
    EDGE_TYPE_OF[(_a, _b)] = EDGE_TYPE_OF[(_b, _a)] = _k


def edge_type(modality_i, modality_j) -> int:
    """Edge type in 1..6: MM, ML, MT, LL, LT, TT."""
    return EDGE_TYPE_OF[(Modality(modality_i), Modality(modality_j))]


def bin_index(x, bins: int, value_range: tuple[float, float] | None = None) -> np.ndarray:
    """Equal-width bin of each value; out-of-range values clamp to the edge bins."""
    x = np.asarray(x, dtype=float)
    lo, hi = value_range if value_range is not None else (float(x.min()), float(x.max()))
    if hi <= lo:
        return np.zeros(x.shape, dtype=int)
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(int)
    return np.clip(idx, 0, bins - 1)


def mutual_information(x_i, x_j, bins: int = 10, range_i=None, range_j=None) -> float:
    """Histogram estimate of I(x_i; x_j) in nats."""
    x_i = np.asarray(x_i, dtype=float)
    x_j = np.asarray(x_j, dtype=float)
    if x_i.shape != x_j.shape:
        raise ValueError(f"length mismatch: {x_i.shape} vs {x_j.shape}")
    if x_i.size < 2 or bins < 2:
        raise ValueError("need at least 2 samples and 2 bins")
    a = bin_index(x_i, bins, range_i)
    b = bin_index(x_j, bins, range_j)
    n = x_i.size
    counts = np.bincount(a * bins + b, minlength=bins * bins).reshape(bins, bins)
    # marginals from integer counts are exact, so swapping the arguments only transposes
    joint = counts / n
    pa = counts.sum(1) / n
    pb = counts.sum(0) / n
    ia, ib = np.nonzero(joint)
    p = joint[ia, ib]
    # fsum makes the total independent of summation order, so I(x;y) == I(y;x) exactly
    return math.fsum(p * np.log(p / (pa[ia] * pb[ib])))


@dataclass(frozen=True)
class AdjacencyTensor:
    slices: np.ndarray  # K x N x N; slice k-1 holds edge type k
    modalities: tuple[Modality, ...]

    @property
    def entries(self) -> np.ndarray:
        """The N x N x K view."""
        return np.moveaxis(self.slices, 0, -1)

    @property
    def n_nodes(self) -> int:
        return self.slices.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["i", "j", "k", "weight"])
        K, N, _ = self.slices.shape
        for i in range(N):
            for j in range(N):
                for k in range(K):
                    writer.writerow([i, j, k + 1, repr(float(self.slices[k, i, j]))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"slices": self.slices.tolist(), "modalities": [m.value for m in self.modalities]}

    @classmethod
    def from_dict(cls, doc: dict) -> "AdjacencyTensor":
        return cls(np.array(doc["slices"], dtype=float), tuple(Modality(m) for m in doc["modalities"]))


def build_adjacency(channels: np.ndarray, modalities: Sequence, bins: int = 10) -> AdjacencyTensor:
    """Pairwise MI written into the slice of each pair's edge type; unit self-loops on every slice."""
    channels = np.asarray(channels, dtype=float)
    modalities = tuple(Modality(m) for m in modalities)
    N = channels.shape[0]
    if N < 2 or len(modalities) != N:
        raise ValueError("need N >= 2 channels with one modality each")
    slices = np.zeros((K_EDGE_TYPES, N, N))
    for i in range(N):
        for j in range(i + 1, N):
            k = edge_type(modalities[i], modalities[j]) - 1
            slices[k, i, j] = slices[k, j, i] = max(mutual_information(channels[i], channels[j], bins), 0.0)
    idx = np.arange(N)
    slices[:, idx, idx] = 1.0
    return AdjacencyTensor(slices, modalities)


@dataclass(frozen=True)
class GraphStream:
    snapshots: np.ndarray  # theta x N; row s is X_{t-theta+1+s}
    adjacency: AdjacencyTensor
    names: tuple[str, ...] = ()
    end: int = 0  # column index of the last snapshot

    @property
    def theta(self) -> int:
        return self.snapshots.shape[0]


def build_stream(X: np.ndarray, adjacency: AdjacencyTensor, t: int, theta: int,
                 names: Sequence[str] = ()) -> GraphStream:
    """Columns t-theta+1..t of the N x tau channel matrix as a stream of snapshots."""
    X = np.asarray(X)
    if t - theta + 1 < 0 or t >= X.shape[1]:
        raise IndexError(f"window ending at {t} with theta={theta} is outside [0, {X.shape[1]})")
    return GraphStream(X[:, t - theta + 1: t + 1].T, adjacency, tuple(names), t)
