"""Fitted serializer: turns one instance's raw telemetry into a normalized channel matrix."""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..telemetry import DataError, Dataset, LogEntry, Span
from .channels import (TRACE_FEATURES, DataChannel, Modality, align_clocks, metric_series,
                       normalize_metric, trace_window_stats, window_counts)
from .drain import DrainParser
from .templates import HashingEmbedder, TemplateCluster, assign_template, cluster_templates, embed_template

FORMAT_VERSION = 1


@dataclass(frozen=True)
class SerializerConfig:
    theta: int = 60
    delta: int = 1
    drain_depth: int = 4
    drain_similarity: float = 0.4
    drain_max_children: int = 100
    embed_dim: int = 64
    embed_seed: int = 0
    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 2

    def __post_init__(self):
        if self.theta < 1 or self.delta < 1:
            raise ValueError("theta and delta must be >= 1")


@dataclass
class ChannelMatrix:
    values: np.ndarray  # N x tau, normalized
    grid_start: int  # epoch minute of column 0
    names: list[str]
    modalities: list[Modality]
    step: int = 1

    def minute(self, column: int) -> int:
        return self.grid_start + column * self.step

    def column(self, minute: int) -> int:
        return (minute - self.grid_start) // self.step

    def select(self, keep: Sequence[int]) -> "ChannelMatrix":
        keep = list(keep)
        return ChannelMatrix(self.values[keep], self.grid_start, [self.names[i] for i in keep],
                             [self.modalities[i] for i in keep], self.step)


@dataclass
class SerializerState:
    config: SerializerConfig
    instance_id: str
    parser: DrainParser
    clusters: list[TemplateCluster]
    metric_names: list[str]
    with_status: bool
    norms: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self._cache: dict[tuple[str, ...], int] = {}

    @property
    def embedder(self) -> HashingEmbedder:
        return HashingEmbedder(self.config.embed_dim, self.config.embed_seed)

    @property
    def channel_names(self) -> list[str]:
        names = [f"metric:{m}" for m in self.metric_names]
        names += [f"log:cluster{c.cluster_id}" for c in self.clusters] + ["log:total"]
        names += [f"trace:{f}" for f in TRACE_FEATURES]
        if self.with_status:
            names.append("trace:errors")
        return names

    # -- logs ------------------------------------------------------------------
    def cluster_of(self, raw_text: str) -> int:
        template = self.parser.match(raw_text)
        key = tuple(template.tokens)
        cid = self._cache.get(key)
        if cid is None:
            cid = assign_template(embed_template(template, self.embedder), self.clusters)
            self._cache[key] = cid
        return cid

    def serialize_logs(self, entries: Sequence[LogEntry], grid_start: int, n_minutes: int) -> list[DataChannel]:
        entries = _time_slice(entries, grid_start * 60, (grid_start + n_minutes) * 60, lambda e: e.timestamp)
        minutes = np.array([e.timestamp // 60 - grid_start for e in entries], dtype=int)
        cids = np.array([self.cluster_of(e.raw_text) for e in entries], dtype=int)
        counts = window_counts(minutes, cids, len(self.clusters), n_minutes, self.config.theta)
        names = [f"log:cluster{c.cluster_id}" for c in self.clusters] + ["log:total"]
        return [DataChannel(n, Modality.LOG, row, grid_start) for n, row in zip(names, counts)]

    def serialize_traces(self, spans: Sequence[Span], grid_start: int, n_minutes: int) -> list[DataChannel]:
        spans = _time_slice(spans, grid_start * 60000, (grid_start + n_minutes) * 60000, lambda s: s.start_ts)
        stats = trace_window_stats(spans, grid_start, n_minutes, self.config.theta, self.with_status)
        names = [f"trace:{f}" for f in TRACE_FEATURES] + (["trace:errors"] if self.with_status else [])
        return [DataChannel(n, Modality.TRACE, row, grid_start) for n, row in zip(names, stats)]

    def serialize_metrics(self, dataset: Dataset, grid_start: int, n_minutes: int) -> list[DataChannel]:
        by_name: dict[str, list] = {m: [] for m in self.metric_names}
        for s in _time_slice(dataset.metrics, grid_start * 60, (grid_start + n_minutes) * 60,
                             lambda m: m.timestamp):
            if s.metric_name in by_name:
                by_name[s.metric_name].append(s)
        out = []
        for name in self.metric_names:
            samples = by_name[name]
            if not samples:
                raise DataError(f"metric {name!r} has no samples for {self.instance_id}")
            lo = max(samples[0].timestamp // 60, grid_start)
            hi = min(samples[-1].timestamp // 60 + 1, grid_start + n_minutes)
            if hi <= lo:
                raise DataError(f"metric {name!r} has no samples inside the requested grid")
            out.append(DataChannel(f"metric:{name}", Modality.METRIC,
                                   metric_series(samples, lo, hi - lo), lo))
        return out

    def raw_channels(self, dataset: Dataset, start_minute: int, end_minute: int) -> list[DataChannel]:
        n = end_minute - start_minute
        if n < 1:
            raise DataError("empty serialization range")
        return (self.serialize_metrics(dataset, start_minute, n)
                + self.serialize_logs(dataset.logs, start_minute, n)
                + self.serialize_traces(dataset.spans, start_minute, n))

    def serialize(self, dataset: Dataset, start_minute: int, end_minute: int,
                  phase: int | None = None) -> ChannelMatrix:
        """Normalized, aligned channels over minutes [start_minute, end_minute), step delta.

        Kept columns are the minutes congruent to ``phase`` (default
        ``start_minute``) modulo delta.
        """
        channels = self.raw_channels(dataset, start_minute, end_minute)
        values, grid_start = align_clocks(channels)
        values = np.vstack([normalize_metric(row, self.norms.get(c.name, 0.0))
                            for row, c in zip(values, channels)])
        step = self.config.delta
        offset = ((start_minute if phase is None else phase) - grid_start) % step
        return ChannelMatrix(values[:, offset::step], grid_start + offset,
                             [c.name for c in channels], [c.modality for c in channels], step)

    # -- persistence -----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "config": asdict(self.config),
            "instance_id": self.instance_id,
            "parser": self.parser.to_dict(),
            "clusters": [{"cluster_id": c.cluster_id, "centroid": c.centroid.tolist(),
                          "members": sorted(c.member_template_ids), "rare": c.rare}
                         for c in self.clusters],
            "metric_names": list(self.metric_names),
            "with_status": self.with_status,
            "norms": dict(self.norms),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SerializerState":
        if doc.get("format_version", 0) > FORMAT_VERSION:
            raise ValueError(f"serializer state format {doc['format_version']} is newer than {FORMAT_VERSION}")
        clusters = [TemplateCluster(c["cluster_id"], np.array(c["centroid"], dtype=float),
                                    frozenset(c["members"]), c["rare"]) for c in doc["clusters"]]
        return cls(SerializerConfig(**doc["config"]), doc["instance_id"],
                   DrainParser.from_dict(doc["parser"]), clusters, list(doc["metric_names"]),
                   bool(doc["with_status"]), {k: float(v) for k, v in doc["norms"].items()})


def _time_slice(items, lo, hi, key):
    """Items with lo <= key < hi from a time-sorted sequence."""
    return items[bisect_left(items, lo, key=key): bisect_left(items, hi, key=key)]


def instance_grid(dataset: Dataset) -> tuple[int, int]:
    """Minute grid [start, end) covering every sample of the dataset."""
    lo, hi = dataset.time_range()
    return lo // 60, hi // 60 + 1


def fit_serializer(dataset: Dataset, train_end_minute: int, config: SerializerConfig | None = None,
                   grid: tuple[int, int] | None = None) -> SerializerState:
    """Fit Drain, template clusters and channel norms on minutes before ``train_end_minute``.

    ``dataset`` must hold a single instance.
    """
    config = config or SerializerConfig()
    if len(dataset.instance_ids) != 1:
        raise ValueError("fit_serializer expects a single-instance dataset")
    instance_id = dataset.instance_ids[0]
    start, _ = grid or instance_grid(dataset)
    if train_end_minute <= start:
        raise DataError("training split is empty")

    parser = DrainParser(config.drain_depth, config.drain_similarity, config.drain_max_children)
    train_logs = [e for e in dataset.logs if e.timestamp // 60 < train_end_minute]
    for e in train_logs:
        parser.parse(e.raw_text)
    embedder = HashingEmbedder(config.embed_dim, config.embed_seed)
    if parser.templates:
        vectors = np.vstack([embed_template(t, embedder) for t in parser.templates])
        clusters = cluster_templates(vectors, config.dbscan_eps, config.dbscan_min_pts,
                                     [t.template_id for t in parser.templates])
    else:
        # no logs seen: one placeholder cluster so online logs still have a home
        clusters = [TemplateCluster(0, np.zeros(config.embed_dim), frozenset(), rare=True)]

    metric_names = sorted({s.metric_name for s in dataset.metrics})
    with_status = any(s.status_code is not None for s in dataset.spans)
    state = SerializerState(config, instance_id, parser, clusters, metric_names, with_status)
    channels = state.raw_channels(dataset, start, train_end_minute)
    state.norms = {c.name: float(np.linalg.norm(c.values)) for c in channels}
    return state
