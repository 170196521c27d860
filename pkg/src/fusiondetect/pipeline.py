"""End-to-end wiring: configuration, per-instance fitting, artifact persistence, detection."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import detect as det
from .graphstream import AdjacencyTensor, build_adjacency
from .model import (ModelState, TrainConfig, load_checkpoint, modality_index, save_checkpoint, train,
                    training_windows)
from .serialize import (ChannelMatrix, Modality, SerializerConfig, SerializerState, fit_serializer,
                        instance_grid)
from .telemetry import Dataset, DataError

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1
PATH_KEYS = ("dataset_dir", "artifacts_dir", "verdicts_path")


class ConfigError(ValueError):
    pass


class ArtifactError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    dataset_dir: str = "data"
    artifacts_dir: str = "artifacts"
    verdicts_path: str = "verdicts.jsonl"
    theta: int = 60
    delta: int = 1
    bins: int = 10
    drain_depth: int = 4
    drain_similarity: float = 0.4
    drain_max_children: int = 100
    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 2
    embed_dim: int = 64
    embed_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    q: float = 1e-3
    pot_level: float = 0.98
    split: float = 0.6
    calibration_fraction: float = 0.2
    modalities: tuple[str, ...] = ("Metric", "Log", "Trace")
    top_k: int = 5
    eval_grace_minutes: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ConfigError("split must lie in (0, 1)")
        if not 0 < self.calibration_fraction < 1:
            raise ConfigError("calibration_fraction must lie in (0, 1)")
        if not 0 < self.q <= 0.1:
            raise ConfigError("q must lie in (0, 0.1]")
        if not 0 < self.pot_level < 1:
            raise ConfigError("pot_level must lie in (0, 1)")
        if self.theta < 2 or self.delta < 1 or self.bins < 2:
            raise ConfigError("need theta >= 2, delta >= 1, bins >= 2")
        if self.dbscan_eps <= 0 or self.dbscan_min_pts < 1 or self.embed_dim < 1:
            raise ConfigError("invalid DBSCAN or embedder parameters")
        if self.eval_grace_minutes < 0:
            raise ConfigError("eval_grace_minutes must be >= 0")
        try:
            mods = tuple(Modality(m).value for m in self.modalities)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not mods:
            raise ConfigError("select at least one modality")
        object.__setattr__(self, "modalities", mods)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "train" in doc:
            tknown = {f.name for f in fields(TrainConfig)}
            bad = set(doc["train"]) - tknown
            if bad:
                raise ConfigError(f"unknown train config keys: {sorted(bad)}")
            try:
                doc["train"] = TrainConfig(**doc["train"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if "modalities" in doc:
            doc["modalities"] = tuple(doc["modalities"])
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        if not os.path.exists(path):
            raise FileNotFoundError(f"no such config file: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        base = os.path.dirname(os.path.abspath(path))
        for key in PATH_KEYS:
            if key in doc and not os.path.isabs(doc[key]):
                doc[key] = os.path.join(base, doc[key])
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["modalities"] = list(self.modalities)
        return doc

    def config_hash(self) -> str:
        """Hash of every setting that shapes artifacts (paths excluded)."""
        doc = {k: v for k, v in self.to_dict().items()
               if k not in PATH_KEYS and k not in ("eval_grace_minutes", "top_k")}
        blob = json.dumps(doc, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def serializer_config(self) -> SerializerConfig:
        return SerializerConfig(self.theta, self.delta, self.drain_depth, self.drain_similarity,
                                self.drain_max_children, self.embed_dim, self.embed_seed,
                                self.dbscan_eps, self.dbscan_min_pts)


@dataclass(frozen=True)
class Splits:
    """Column indices into the instance's channel matrix."""

    n_columns: int
    train_end: int  # model and serializer fit on columns < train_end
    calibration_start: int  # gradient windows end before this column

    def train_ends(self, theta: int) -> np.ndarray:
        return np.arange(theta - 1, self.calibration_start)

    def calibration_ends(self, theta: int) -> np.ndarray:
        return np.arange(max(self.calibration_start, theta - 1), self.train_end)

    def test_ends(self, theta: int) -> np.ndarray:
        return np.arange(max(self.train_end, theta - 1), self.n_columns)


def make_splits(n_columns: int, cfg: PipelineConfig) -> Splits:
    train_end = int(n_columns * cfg.split)
    cal_start = int(train_end * (1.0 - cfg.calibration_fraction))
    if cal_start - (cfg.theta - 1) < 1:
        raise DataError(f"training split of {train_end} columns is too short for theta={cfg.theta}")
    if train_end - max(cal_start, cfg.theta - 1) < det.MIN_CALIBRATION:
        raise DataError("calibration window is too short")
    return Splits(n_columns, train_end, cal_start)


@dataclass
class InstanceModel:
    """Everything needed to score one instance online."""

    instance_id: str
    serializer: SerializerState
    keep: list[int]  # channel indices (of the serializer's output) fed to the model
    channel_names: list[str]
    adjacency: AdjacencyTensor
    model: ModelState
    scores: det.ScoreState
    splits: Splits
    grid_start: int  # epoch minute of column 0
    config_hash: str

    @property
    def theta(self) -> int:
        return self.model.theta

    def select(self, matrix: ChannelMatrix) -> ChannelMatrix:
        if len(matrix.names) <= max(self.keep, default=-1):
            raise ArtifactError("channel matrix does not match the fitted serializer")
        return matrix.select(self.keep)


# ------------------------------------------------------------------ fitting

def prediction_errors(inst: InstanceModel, X: np.ndarray, ends: Sequence[int],
                      batch: int = 128) -> np.ndarray:
    """(len(ends), N) absolute errors of the model's last-snapshot prediction."""
    out = []
    ends = np.asarray(ends, dtype=int)
    for i in range(0, len(ends), batch):
        w = training_windows(X, ends[i: i + batch], inst.theta)
        pred = inst.model.predict(inst.adjacency.slices, w).prediction
        out.append(det.channel_errors(pred, w[:, -1, :]))
    return np.vstack(out) if out else np.zeros((0, X.shape[0]))


class StageError(RuntimeError):
    """An error raised inside a named pipeline stage; ``cause`` is the original exception."""

    def __init__(self, stage: str, instance_id: str, cause: BaseException):
        super().__init__(f"{instance_id}: stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str, instance_id: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, instance_id, exc) from exc


def fit_instance(dataset: Dataset, cfg: PipelineConfig) -> tuple[InstanceModel, ChannelMatrix]:
    """Fit serializer, adjacency, model and score state for a single-instance dataset.

    The model is seeded from ``cfg.seed``. Errors are re-raised as
    :class:`StageError` naming the stage that failed.
    """
    instance_id = dataset.instance_ids[0]
    with _stage("serialize", instance_id):
        grid = instance_grid(dataset)
        n_columns = -(-(grid[1] - grid[0]) // cfg.delta)
        splits = make_splits(n_columns, cfg)
        train_end_minute = grid[0] + splits.train_end * cfg.delta
        t = time.perf_counter()
        serializer = fit_serializer(dataset, train_end_minute, cfg.serializer_config(), grid)
        full = serializer.serialize(dataset, grid[0], grid[1])
        if full.values.shape[1] != n_columns:
            # metrics may start late or end early; keep the column bookkeeping honest
            splits = make_splits(full.values.shape[1], cfg)
        keep = [i for i, m in enumerate(full.modalities) if m.value in cfg.modalities]
        if len(keep) < 2:
            raise DataError(f"fewer than 2 channels for modalities {list(cfg.modalities)}")
        matrix = full.select(keep)
        X = matrix.values
        log.info("%s: serialized %d channels x %d columns in %.1fs", instance_id, X.shape[0], X.shape[1],
                 time.perf_counter() - t)

    with _stage("adjacency", instance_id):
        adjacency = build_adjacency(X[:, : splits.train_end], matrix.modalities, cfg.bins)

    with _stage("train", instance_id):
        tcfg = replace(cfg.train, seed=cfg.seed)
        t = time.perf_counter()
        model = train(X, adjacency.slices, modality_index(matrix.modalities), splits.train_ends(cfg.theta),
                      tcfg, cfg.theta)
        if model.loss_history:
            log.info("%s: trained %d epochs in %.1fs (loss %.4g -> %.4g)", instance_id, tcfg.epochs,
                     time.perf_counter() - t, model.loss_history[0], model.loss_history[-1])

    with _stage("calibrate", instance_id):
        inst = InstanceModel(instance_id, serializer, keep, list(matrix.names), adjacency, model,
                             None, splits, full.grid_start, cfg.config_hash())
        errors = prediction_errors(inst, X, splits.calibration_ends(cfg.theta))
        inst.scores = det.calibrate(errors, matrix.names, cfg.q, cfg.pot_level)
    return inst, matrix


def instance_matrix(inst: InstanceModel, dataset: Dataset) -> ChannelMatrix:
    """The instance's model channels over its whole grid, using the fitted serializer."""
    grid = instance_grid(dataset)
    if grid[0] != inst.grid_start:
        raise DataError(f"{inst.instance_id}: data starts at minute {grid[0]}, "
                        f"artifacts were fitted from minute {inst.grid_start}")
    return inst.select(inst.serializer.serialize(dataset, grid[0], grid[1]))


# ------------------------------------------------------------------ detection

def detect_columns(inst: InstanceModel, X: np.ndarray, ends: Sequence[int], top_k: int = 5) -> list[det.FailureVerdict]:
    errors = prediction_errors(inst, X, ends)
    step = inst.serializer.config.delta
    return [det.make_verdict((inst.grid_start + int(c) * step) * 60, e, inst.scores, top_k, inst.instance_id)
            for c, e in zip(ends, errors)]


def detect(t_minute: int, inst: InstanceModel, dataset: Dataset, top_k: int = 5) -> det.FailureVerdict:
    """Verdict for the window ending at epoch minute ``t_minute``, serializing only the data it needs."""
    theta = inst.theta
    step = inst.serializer.config.delta
    if (t_minute - inst.grid_start) % step:
        raise ValueError(f"minute {t_minute} is off the step-{step} grid")
    first = t_minute - (theta - 1) * step
    if first < inst.grid_start:
        raise DataError(f"insufficient history: window ending at minute {t_minute} needs data from "
                        f"minute {first}, series starts at {inst.grid_start}")
    start = max(inst.grid_start, first - (inst.serializer.config.theta - 1))
    matrix = inst.serializer.serialize(dataset, start, t_minute + 1, phase=inst.grid_start)
    matrix = inst.select(matrix)
    col = matrix.column(t_minute)
    if col < theta - 1 or col >= matrix.values.shape[1]:
        raise DataError(f"no data at minute {t_minute}")
    errors = prediction_errors(inst, matrix.values, [col])[0]
    return det.make_verdict(t_minute * 60, errors, inst.scores, top_k, inst.instance_id)


# ------------------------------------------------------------------ artifacts

def _write_json(path, doc) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _read_json(path) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing artifact: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_instance(inst: InstanceModel, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    meta = {"format_version": ARTIFACT_VERSION, "config_hash": inst.config_hash,
            "instance_id": inst.instance_id, "keep": inst.keep, "channel_names": inst.channel_names,
            "splits": asdict(inst.splits), "grid_start": inst.grid_start}
    _write_json(os.path.join(directory, "serializer.json"), inst.serializer.to_dict())
    _write_json(os.path.join(directory, "adjacency.json"), inst.adjacency.to_dict())
    with open(os.path.join(directory, "adjacency.csv"), "w", encoding="utf-8") as fh:
        fh.write(inst.adjacency.to_csv())
    save_checkpoint(inst.model, os.path.join(directory, "model.ckpt"), {"config_hash": inst.config_hash})
    _write_json(os.path.join(directory, "score_state.json"), inst.scores.to_dict())
    with open(os.path.join(directory, "loss_history.csv"), "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(inst.model.loss_history, start=1):
            fh.write(f"{i},{v!r}\n")
    _write_json(os.path.join(directory, "meta.json"), meta)


def load_instance(directory, expected_hash: str | None = None) -> InstanceModel:
    meta = _read_json(os.path.join(directory, "meta.json"))
    if meta.get("format_version", 0) > ARTIFACT_VERSION:
        raise ArtifactError(f"{directory}: artifact format {meta['format_version']} is newer than {ARTIFACT_VERSION}")
    if expected_hash is not None and meta["config_hash"] != expected_hash:
        raise ArtifactError(f"{directory}: artifacts were built with config {meta['config_hash']}, "
                            f"current config is {expected_hash}")
    serializer = SerializerState.from_dict(_read_json(os.path.join(directory, "serializer.json")))
    adjacency = AdjacencyTensor.from_dict(_read_json(os.path.join(directory, "adjacency.json")))
    ckpt = os.path.join(directory, "model.ckpt")
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"missing artifact: {ckpt}")
    model, extra = load_checkpoint(ckpt)
    if extra.get("config_hash") != meta["config_hash"]:
        raise ArtifactError(f"{ckpt}: checkpoint config hash does not match {directory}/meta.json")
    scores = det.ScoreState.from_dict(_read_json(os.path.join(directory, "score_state.json")))
    return InstanceModel(meta["instance_id"], serializer, list(meta["keep"]), list(meta["channel_names"]),
                         adjacency, model, scores, Splits(**meta["splits"]), meta["grid_start"],
                         meta["config_hash"])


def save_run(instances: dict[str, InstanceModel], cfg: PipelineConfig, directory=None) -> str:
    directory = directory or cfg.artifacts_dir
    os.makedirs(directory, exist_ok=True)
    for iid, inst in instances.items():
        save_instance(inst, os.path.join(directory, iid))
    _write_json(os.path.join(directory, "manifest.json"),
                {"format_version": ARTIFACT_VERSION, "config_hash": cfg.config_hash(),
                 "instances": sorted(instances), "config": cfg.to_dict()})
    return directory


def load_run(cfg: PipelineConfig, directory=None) -> dict[str, InstanceModel]:
    """Load every instance's artifacts, refusing ones built under a different config."""
    directory = directory or cfg.artifacts_dir
    manifest = _read_json(os.path.join(directory, "manifest.json"))
    if manifest.get("format_version", 0) > ARTIFACT_VERSION:
        raise ArtifactError(f"{directory}: artifact format {manifest['format_version']} is newer "
                            f"than {ARTIFACT_VERSION}")
    expected = cfg.config_hash()
    if manifest["config_hash"] != expected:
        raise ArtifactError(f"{directory}: artifacts were built with config {manifest['config_hash']}, "
                            f"current config is {expected}")
    return {iid: load_instance(os.path.join(directory, iid), expected) for iid in manifest["instances"]}


# ------------------------------------------------------------------ whole-dataset runs

@dataclass
class RunResult:
    report: det.EvalReport
    verdicts: list[det.FailureVerdict]
    instances: dict[str, InstanceModel]
    detect_seconds: float  # mean wall time per scored window
    train_seconds: float


def run_pipeline(dataset: Dataset, cfg: PipelineConfig) -> RunResult:
    """Fit every instance, detect over its test split, and evaluate against the labels."""
    verdicts: list[det.FailureVerdict] = []
    instances = {}
    fit_time = 0.0
    det_time, n_windows = 0.0, 0
    for iid in dataset.instance_ids:
        part = dataset.for_instance(iid)
        t = time.perf_counter()
        inst, matrix = fit_instance(part, cfg)
        fit_time += time.perf_counter() - t
        ends = inst.splits.test_ends(cfg.theta)
        t = time.perf_counter()
        verdicts += detect_columns(inst, matrix.values, ends, cfg.top_k)
        det_time += time.perf_counter() - t
        n_windows += len(ends)
        instances[iid] = inst
    test_labels = [l for l in dataset.labels if l.instance_id in instances
                   and l.end_ts >= instances[l.instance_id].grid_start * 60
                   + instances[l.instance_id].splits.train_end * cfg.delta * 60]
    report = det.evaluate(verdicts, test_labels, cfg.eval_grace_minutes * 60)
    return RunResult(report, verdicts, instances, det_time / max(n_windows, 1), fit_time)


ABLATIONS = {
    "full": ("Metric", "Log", "Trace"),
    "metrics-only": ("Metric",),
    "logs-only": ("Log",),
    "traces-only": ("Trace",),
}


def run_ablations(dataset: Dataset, cfg: PipelineConfig,
                  names: Sequence[str] = tuple(ABLATIONS)) -> dict[str, RunResult]:
    """Same pipeline on the full channel set and on each single-modality subset."""
    out = {}
    for name in names:
        t = time.perf_counter()
        out[name] = run_pipeline(dataset, replace(cfg, modalities=ABLATIONS[name]))
        log.info("%s: F1 %.3f (%s) in %.0fs", name, out[name].report.f1, out[name].report.to_dict(),
                 time.perf_counter() - t)
    return out
