"""Raw multimodal telemetry: data model, file loaders and a seeded generator.

Metrics are read from CSV (``instance_id,metric_name,timestamp,value``);
logs, spans and failure labels from JSONL, one record per line.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable

import numpy as np

FAILURE_TYPES = ("metric_surge", "metric_drop", "error_log_burst", "rt_spike", "combined")
METRIC_HEADER = ["instance_id", "metric_name", "timestamp", "value"]


class DataError(ValueError):
    """Malformed or invariant-violating input data."""


@dataclass(frozen=True)
class MetricSample:
    instance_id: str
    metric_name: str
    timestamp: int
    value: float

    def __post_init__(self):
        if self.timestamp < 0:
            raise DataError(f"negative timestamp {self.timestamp}")
        if not math.isfinite(self.value):
            raise DataError(f"non-finite metric value {self.value!r}")


@dataclass(frozen=True)
class LogEntry:
    instance_id: str
    timestamp: int
    raw_text: str

    def __post_init__(self):
        if self.timestamp < 0:
            raise DataError(f"negative timestamp {self.timestamp}")
        if not self.raw_text:
            raise DataError("empty log text")


@dataclass(frozen=True)
class Span:
    trace_id: str
    span_id: str
    parent_span_id: str | None
    instance_id: str
    start_ts: int  # epoch milliseconds
    duration_ms: float
    status_code: int | None = None

    def __post_init__(self):
        if not (self.duration_ms >= 0) or not math.isfinite(self.duration_ms):
            raise DataError(f"invalid duration_ms {self.duration_ms!r}")
        if self.start_ts < 0:
            raise DataError(f"negative start_ts {self.start_ts}")


@dataclass(frozen=True)
class FailureLabel:
    instance_id: str
    start_ts: int
    end_ts: int
    failure_type: str

    def __post_init__(self):
        if self.start_ts > self.end_ts:
            raise DataError(f"label start_ts {self.start_ts} > end_ts {self.end_ts}")


@dataclass(frozen=True)
class Dataset:
    metrics: tuple[MetricSample, ...]
    logs: tuple[LogEntry, ...]
    spans: tuple[Span, ...]
    labels: tuple[FailureLabel, ...]
    instance_ids: tuple[str, ...]

    def __post_init__(self):
        known = set(self.instance_ids)
        for kind, items in (("metric", self.metrics), ("log", self.logs),
                            ("span", self.spans), ("label", self.labels)):
            for item in items:
                if item.instance_id not in known:
                    raise DataError(f"{kind} references unknown instance {item.instance_id!r}")

    def for_instance(self, instance_id: str) -> "Dataset":
        keep = lambda items: tuple(x for x in items if x.instance_id == instance_id)
        return Dataset(keep(self.metrics), keep(self.logs), keep(self.spans),
                       keep(self.labels), (instance_id,))

    def time_range(self) -> tuple[int, int]:
        """Earliest and latest timestamp in epoch seconds over all modalities."""
        stamps = [m.timestamp for m in self.metrics] + [e.timestamp for e in self.logs]
        stamps += [s.start_ts // 1000 for s in self.spans]
        if not stamps:
            raise DataError("dataset holds no samples")
        return min(stamps), max(stamps)


def make_dataset(metrics: Iterable[MetricSample], logs: Iterable[LogEntry],
                 spans: Iterable[Span], labels: Iterable[FailureLabel],
                 instance_ids: Iterable[str] | None = None) -> Dataset:
    """Sort every modality by time and infer instance ids when not given."""
    metrics = sorted(metrics, key=lambda m: (m.timestamp, m.instance_id, m.metric_name))
    logs = sorted(logs, key=lambda e: e.timestamp)
    spans = sorted(spans, key=lambda s: s.start_ts)
    labels = sorted(labels, key=lambda l: (l.start_ts, l.instance_id))
    if instance_ids is None:
        seen = {x.instance_id for x in (*metrics, *logs, *spans, *labels)}
        instance_ids = sorted(seen)
    return Dataset(tuple(metrics), tuple(logs), tuple(spans), tuple(labels), tuple(instance_ids))


# ---------------------------------------------------------------- loaders

def _open_checked(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    return open(path, encoding="utf-8", newline="")


def load_metrics(path) -> list[MetricSample]:
    out = []
    with _open_checked(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip() for h in header] != METRIC_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(METRIC_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                sample = MetricSample(row[0], row[1], int(row[2]), float(row[3]))
            except (ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            out.append(sample)
    out.sort(key=lambda m: (m.instance_id, m.metric_name, m.timestamp))
    return out


def _load_jsonl(path, build, sort_key):
    out = []
    with _open_checked(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise DataError("record is not an object")
                out.append(build(record))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    out.sort(key=sort_key)
    return out


def load_logs(path) -> list[LogEntry]:
    return _load_jsonl(
        path,
        lambda r: LogEntry(str(r["instance_id"]), int(r["timestamp"]), str(r["raw_text"])),
        lambda e: e.timestamp,
    )


def load_traces(path) -> list[Span]:
    def build(r):
        parent = r.get("parent_span_id")
        status = r.get("status_code")
        return Span(str(r["trace_id"]), str(r["span_id"]),
                    None if parent is None else str(parent), str(r["instance_id"]),
                    int(r["start_ts"]), float(r["duration_ms"]),
                    None if status is None else int(status))

    spans = _load_jsonl(path, build, lambda s: s.start_ts)
    seen = set()
    for s in spans:
        if (s.trace_id, s.span_id) in seen:
            raise DataError(f"{path}: duplicate span_id {s.span_id!r} in trace {s.trace_id!r}")
        seen.add((s.trace_id, s.span_id))
    return spans


def load_labels(path) -> list[FailureLabel]:
    return _load_jsonl(
        path,
        lambda r: FailureLabel(str(r["instance_id"]), int(r["start_ts"]), int(r["end_ts"]),
                               str(r.get("failure_type", "unknown"))),
        lambda l: (l.start_ts, l.instance_id),
    )


def load_dataset(directory) -> Dataset:
    """Load the four files written by :func:`write_dataset`."""
    d = str(directory)
    metrics = load_metrics(os.path.join(d, "metrics.csv"))
    logs = load_logs(os.path.join(d, "logs.jsonl"))
    spans = load_traces(os.path.join(d, "traces.jsonl"))
    labels_path = os.path.join(d, "labels.jsonl")
    labels = load_labels(labels_path) if os.path.exists(labels_path) else []
    instance_ids = None
    manifest = os.path.join(d, "manifest.json")
    if os.path.exists(manifest):
        with open(manifest, encoding="utf-8") as fh:
            instance_ids = json.load(fh).get("instance_ids")
    return make_dataset(metrics, logs, spans, labels, instance_ids)


# ---------------------------------------------------------------- writers

def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def write_dataset(dataset: Dataset, directory, manifest: dict | None = None) -> dict[str, int]:
    """Write metrics CSV plus logs/traces/labels JSONL; returns row counts per file."""
    os.makedirs(directory, exist_ok=True)
    lines = [",".join(METRIC_HEADER)]
    lines += [f"{m.instance_id},{m.metric_name},{m.timestamp},{m.value!r}" for m in dataset.metrics]
    _atomic_write(os.path.join(directory, "metrics.csv"), "\n".join(lines) + "\n")
    _atomic_write(os.path.join(directory, "logs.jsonl"), _jsonl(asdict(e) for e in dataset.logs))
    _atomic_write(os.path.join(directory, "traces.jsonl"), _jsonl(asdict(s) for s in dataset.spans))
    _atomic_write(os.path.join(directory, "labels.jsonl"), _jsonl(asdict(l) for l in dataset.labels))
    counts = {"metrics.csv": len(dataset.metrics), "logs.jsonl": len(dataset.logs),
              "traces.jsonl": len(dataset.spans), "labels.jsonl": len(dataset.labels)}
    doc = dict(manifest or {})
    doc.update(instance_ids=list(dataset.instance_ids), counts=counts)
    _atomic_write(os.path.join(directory, "manifest.json"), json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return counts


# ---------------------------------------------------------------- generator

# Normal templates come in near-duplicate pairs so they cluster into families;
# the error templates are mutually dissimilar and land in the rare cluster.
DEFAULT_LOG_TEMPLATES = (
    {"text": "request {int} GET /api/orders/{int} handled by order service returned status {int} in {int} ms",
     "rate": 3.0, "error": False},
    {"text": "request {int} GET /api/orders/{int} handled by order service returned status {int} in {int} ms "
             "from cache", "rate": 1.5, "error": False},
    {"text": "user {int} login succeeded from {ip} with session token issued by auth service",
     "rate": 1.5, "error": False},
    {"text": "user {int} login succeeded from {ip} with session token issued by auth service after refresh",
     "rate": 0.5, "error": False},
    {"text": "cache hit ratio {float} for shard {int} reported by storage monitor on node {int}",
     "rate": 1.0, "error": False},
    {"text": "cache hit ratio {float} for shard {int} reported by storage monitor on node {int} during compaction",
     "rate": 0.5, "error": False},
    {"text": "ERROR failed to connect to database at {ip} after {int} retries", "rate": 0.3, "error": True},
    {"text": "ERROR request {hex} timed out waiting for upstream", "rate": 0.1, "error": True},
    {"text": "WARN disk usage high on volume {int}", "rate": 0.2, "error": True},
)

METRIC_NAMES = ("cpu_usage", "mem_usage", "disk_io", "net_in", "net_out", "gc_time",
                "thread_count", "queue_depth")


@dataclass(frozen=True)
class FailureScenario:
    type: str
    instance: int
    start_minute: int
    duration_minutes: int
    magnitude: float | None = None  # sigma shift / rate or RT multiplier
    metric: int = 0
    template: int | None = None

    def __post_init__(self):
        if self.type not in FAILURE_TYPES:
            raise ValueError(f"unknown failure type {self.type!r}; expected one of {FAILURE_TYPES}")
        if self.duration_minutes < 1 or self.start_minute < 0:
            raise ValueError("scenario needs start_minute >= 0 and duration_minutes >= 1")


@dataclass(frozen=True)
class GeneratorConfig:
    duration_minutes: int = 1440
    n_instances: int = 1
    metrics_per_instance: int = 4
    start_ts: int = 0
    metric_level: float = 50.0
    seasonal_amplitude: float = 10.0
    noise_sigma: float = 1.0
    log_templates: tuple[dict, ...] = DEFAULT_LOG_TEMPLATES
    trace_rate: float = 6.0  # traces per minute
    base_rt_ms: float = 40.0
    rt_sigma: float = 0.2  # lognormal shape of normal span RTs
    error_status_rate: float = 0.01
    topology: tuple[tuple[int, ...], ...] | None = None  # call chains over instance indices
    failures: tuple[FailureScenario, ...] = ()

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "GeneratorConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "failures" in doc:
            doc["failures"] = tuple(FailureScenario(**f) for f in doc["failures"])
        if "log_templates" in doc:
            doc["log_templates"] = tuple(dict(t) for t in doc["log_templates"])
        if doc.get("topology") is not None:
            doc["topology"] = tuple(tuple(int(i) for i in chain) for chain in doc["topology"])
        return cls(**doc)

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["log_templates"] = [dict(t) for t in self.log_templates]
        doc["failures"] = [asdict(f) for f in self.failures]
        doc["topology"] = None if self.topology is None else [list(c) for c in self.topology]
        return doc

    def chains(self) -> tuple[tuple[int, ...], ...]:
        if self.topology is None:
            return (tuple(range(self.n_instances)),)
        return self.topology


def metric_name(index: int) -> str:
    return METRIC_NAMES[index] if index < len(METRIC_NAMES) else f"metric_{index}"


def instance_name(index: int) -> str:
    return f"inst-{index}"


def _validate(config: GeneratorConfig) -> None:
    if config.duration_minutes < 1 or config.n_instances < 1 or config.metrics_per_instance < 1:
        raise ValueError("duration, instance count and metric count must be positive")
    chains = config.chains()
    if not chains or any(len(c) == 0 for c in chains):
        raise ValueError("call topology is empty")
    for chain in chains:
        for i in chain:
            if not 0 <= i < config.n_instances:
                raise ValueError(f"topology references unknown instance index {i}")
    if not any(t.get("error") for t in config.log_templates):
        if any(f.type in ("error_log_burst", "combined") for f in config.failures):
            raise ValueError("error_log_burst needs at least one error template")
    for f in config.failures:
        if f.start_minute + f.duration_minutes > config.duration_minutes:
            raise ValueError(f"scenario window {f.start_minute}+{f.duration_minutes} "
                             f"outside duration {config.duration_minutes}")
        if not 0 <= f.instance < config.n_instances:
            raise ValueError(f"scenario instance {f.instance} out of range")
        if not 0 <= f.metric < config.metrics_per_instance:
            raise ValueError(f"scenario metric {f.metric} out of range")
        if f.magnitude is not None:
            floor = 5.0 if f.type in ("metric_surge", "metric_drop") else 10.0
            if f.magnitude < floor:
                raise ValueError(f"{f.type} magnitude must be >= {floor}")


_PLACEHOLDER = re.compile(r"\{(int|ip|hex|float)\}")


def _fill(text: str, rng: np.random.Generator) -> str:
    def one(match):
        kind = match.group(1)
        if kind == "int":
            return str(int(rng.integers(1, 100000)))
        if kind == "ip":
            return "10.{}.{}.{}".format(*rng.integers(0, 256, size=3))
        if kind == "hex":
            return "%08x" % int(rng.integers(0, 2**32))
        return f"{rng.random():.3f}"
    return _PLACEHOLDER.sub(one, text)


def generate_synthetic(config: GeneratorConfig, seed: int) -> Dataset:
    """Seeded microservice telemetry with labeled failure injection.

    Normal metrics are ``level + amplitude * sin(daily phase) + N(0, sigma)``.
    Injected scenarios shift one metric mean by ``magnitude * sigma`` (default 8),
    multiply an error template's rate (default x20), or multiply span RTs
    (default x12). Labels cover exactly the injected minutes.
    """
    _validate(config)
    root = np.random.SeedSequence(seed)
    n = config.n_instances
    minutes = np.arange(config.duration_minutes)
    t0 = config.start_ts - config.start_ts % 60
    # phase per (instance, metric) so channels are not trivially identical
    layout_rng = np.random.default_rng(root.spawn(1)[0])

    surge = np.zeros((n, config.metrics_per_instance, config.duration_minutes))
    burst = np.ones((n, config.duration_minutes))
    burst_template = {}
    rt_mult = np.ones((n, config.duration_minutes))
    labels = []
    error_idx = [i for i, t in enumerate(config.log_templates) if t.get("error")]
    for f in config.failures:
        window = slice(f.start_minute, f.start_minute + f.duration_minutes)
        if f.type in ("metric_surge", "combined"):
            surge[f.instance, f.metric, window] += (f.magnitude or 8.0) * config.noise_sigma
        if f.type == "metric_drop":
            surge[f.instance, f.metric, window] -= (f.magnitude or 8.0) * config.noise_sigma
        if f.type in ("error_log_burst", "combined"):
            burst[f.instance, window] = f.magnitude or 20.0
            tmpl = f.template if f.template is not None else error_idx[0]
            if not config.log_templates[tmpl].get("error"):
                raise ValueError(f"template {tmpl} is not an error template")
            for m in range(window.start, window.stop):
                burst_template[(f.instance, m)] = tmpl
        if f.type in ("rt_spike", "combined"):
            rt_mult[f.instance, window] = f.magnitude or 12.0
        labels.append(FailureLabel(
            instance_name(f.instance), t0 + f.start_minute * 60,
            t0 + (f.start_minute + f.duration_minutes) * 60 - 1, f.type))

    metrics = []
    logs = []
    inst_seeds = root.spawn(n + 1)
    for i in range(n):
        rng = np.random.default_rng(inst_seeds[i])
        name = instance_name(i)
        for k in range(config.metrics_per_instance):
            phase = layout_rng.uniform(0, 2 * np.pi)
            level = config.metric_level * (1.0 + 0.5 * k)
            seasonal = config.seasonal_amplitude * np.sin(2 * np.pi * minutes / 1440.0 + phase)
            values = level + seasonal + rng.normal(0.0, config.noise_sigma, size=minutes.size)
            values = values + surge[i, k]
            for m in minutes:
                metrics.append(MetricSample(name, metric_name(k), int(t0 + m * 60), float(values[m])))
        for m in minutes:
            for j, tmpl in enumerate(config.log_templates):
                rate = float(tmpl["rate"])
                forced = burst_template.get((i, int(m))) == j
                if forced:
                    rate *= burst[i, m]
                count = int(rng.poisson(rate))
                if forced:
                    count = max(count, 1)
                for _ in range(count):
                    ts = int(t0 + m * 60 + rng.integers(0, 60))
                    logs.append(LogEntry(name, ts, _fill(tmpl["text"], rng)))

    spans = []
    trace_rng = np.random.default_rng(inst_seeds[n])
    chains = config.chains()
    for m in minutes:
        count = int(trace_rng.poisson(config.trace_rate))
        spiking = [i for i in range(n) if rt_mult[i, m] > 1.0]
        # every instance under an RT spike must see traffic that minute
        starts = [int(trace_rng.integers(len(chains))) for _ in range(count)]
        for i in spiking:
            if not any(i in chains[c] for c in starts):
                starts.append(next(c for c, chain in enumerate(chains) if i in chain))
        for c in starts:
            trace_id = "%016x" % int(trace_rng.integers(0, 2**63))
            begin = int((t0 + m * 60) * 1000 + trace_rng.integers(0, 59900))
            parent = None
            for depth, i in enumerate(chains[c]):
                d = config.base_rt_ms * float(trace_rng.lognormal(0.0, config.rt_sigma))
                mult = rt_mult[i, m]
                if mult > 1.0:
                    d = max(d * mult, mult * config.base_rt_ms)
                status = 1 if trace_rng.random() < config.error_status_rate else 0
                span_id = f"{depth:02d}{int(trace_rng.integers(0, 2**31)):08x}"
                spans.append(Span(trace_id, span_id, parent, instance_name(i),
                                  begin + depth, round(d, 3), status))
                parent = span_id

    return make_dataset(metrics, logs, spans, labels, [instance_name(i) for i in range(n)])
