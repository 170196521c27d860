"""Template embedding, DBSCAN grouping with medoid centroids, online assignment."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from sklearn.cluster import DBSCAN

from .drain import WILDCARD, LogTemplate


class Embedder(Protocol):
    dim: int

    def __call__(self, tokens: Sequence[str]) -> np.ndarray: ...


@dataclass(frozen=True)
class HashingEmbedder:
    """Bag of constant tokens hashed into ``dim`` buckets, L2-normalized."""

    dim: int = 64
    seed: int = 0

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8,
                                 salt=self.seed.to_bytes(8, "little")).digest()
        return int.from_bytes(digest, "little") % self.dim

    def __call__(self, tokens: Sequence[str]) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in tokens:
            if token != WILDCARD:
                vec[self.bucket(token.lower())] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


def embed_template(template: LogTemplate | Sequence[str], embedder: Embedder) -> np.ndarray:
    tokens = template.tokens if isinstance(template, LogTemplate) else list(template)
    if not tokens:
        raise ValueError("empty template")
    return embedder(tokens)


@dataclass
class TemplateCluster:
    cluster_id: int
    centroid: np.ndarray
    member_template_ids: frozenset[int]
    rare: bool = False


def medoid_index(points: np.ndarray) -> int:
    """Index of the member minimizing the summed Euclidean distance to all members."""
    diff = points[:, None, :] - points[None, :, :]
    cost = np.sqrt((diff ** 2).sum(-1)).sum(1)
    return int(np.argmin(cost))


def cluster_templates(vectors: np.ndarray, eps: float = 0.5, min_pts: int = 2,
                      template_ids: Sequence[int] | None = None) -> list[TemplateCluster]:
    """DBSCAN over template embeddings; noise points are pooled into one rare cluster."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    if len(vectors) == 0:
        raise ValueError("need at least one vector")
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    ids = list(range(len(vectors))) if template_ids is None else list(template_ids)
    labels = DBSCAN(eps=eps, min_samples=min_pts, metric="euclidean").fit_predict(vectors)
    groups = [np.flatnonzero(labels == c) for c in sorted(set(labels) - {-1})]
    noise = np.flatnonzero(labels == -1)
    clusters = []
    for members, rare in [(g, False) for g in groups] + ([(noise, True)] if noise.size else []):
        centroid = vectors[members[medoid_index(vectors[members])]].copy()
        clusters.append(TemplateCluster(len(clusters), centroid,
                                        frozenset(ids[i] for i in members), rare))
    return clusters


def assign_template(vector: np.ndarray, clusters: Sequence[TemplateCluster]) -> int:
    """Nearest centroid; ties go to the smallest cluster id."""
    if not clusters:
        raise ValueError("no clusters to assign to")
    best_id, best_d = None, np.inf
    for c in sorted(clusters, key=lambda c: c.cluster_id):
        d = float(np.linalg.norm(np.asarray(vector) - c.centroid))
        if d < best_d:
            best_id, best_d = c.cluster_id, d
    return best_id
