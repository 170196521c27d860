"""Benchmark, ablation, sweep and latency harnesses shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import pipeline as pl
from .serialize import fit_serializer
from .scenarios import benchmark_config, benchmark_pipeline_config
from .telemetry import Dataset, GeneratorConfig, generate_synthetic

log = logging.getLogger(__name__)


@dataclass
class BenchmarkResult:
    reports: dict[str, dict]  # ablation name -> EvalReport.to_dict()
    seconds: dict[str, float]
    detect_ms: dict[str, float]  # mean batched per-window detect time
    total_seconds: float

    @property
    def full_f1(self) -> float:
        return self.reports["full"]["F1"]

    def margins(self) -> dict[str, float]:
        """Full F1 minus each single-modality F1."""
        return {k: self.full_f1 - v["F1"] for k, v in self.reports.items() if k != "full"}

    def table(self) -> str:
        rows = [f"{'run':<14}{'TP':>4}{'FP':>5}{'FN':>4}{'prec':>8}{'rec':>8}{'F1':>8}{'sec':>8}"]
        for k, r in self.reports.items():
            rows.append(f"{k:<14}{r['TP']:>4}{r['FP']:>5}{r['FN']:>4}{r['precision']:>8.3f}"
                        f"{r['recall']:>8.3f}{r['F1']:>8.3f}{self.seconds[k]:>8.0f}")
        return "\n".join(rows)


def run_benchmark(seed: int = 0, cfg: pl.PipelineConfig | None = None,
                  dataset: Dataset | None = None,
                  ablations: Sequence[str] = tuple(pl.ABLATIONS)) -> BenchmarkResult:
    """Three-instance week with twelve failures: full pipeline plus single-modality ablations."""
    t0 = time.perf_counter()
    cfg = cfg or benchmark_pipeline_config(seed=seed)
    if dataset is None:
        dataset = generate_synthetic(benchmark_config(seed), seed)
    reports, seconds, detect_ms = {}, {}, {}
    for name in ablations:
        t = time.perf_counter()
        res = pl.run_pipeline(dataset, replace(cfg, modalities=pl.ABLATIONS[name]))
        seconds[name] = time.perf_counter() - t
        reports[name] = res.report.to_dict()
        detect_ms[name] = 1000.0 * res.detect_seconds
        log.info("%s: %s in %.0fs", name, reports[name], seconds[name])
    return BenchmarkResult(reports, seconds, detect_ms, time.perf_counter() - t0)


def sweep(dataset: Dataset, cfg: pl.PipelineConfig, thetas: Sequence[int] = (10, 60, 120),
          heads: Sequence[int] = (2, 6, 10), base_theta: int = 60, base_heads: int = 6) -> list[dict]:
    """One-at-a-time sweep: vary theta at ``base_heads``, then heads at ``base_theta``.

    Returns one row per run with the parameter varied, its value, and the
    evaluation counts.
    """
    runs = [("theta", th, th, base_heads) for th in thetas] + [("heads", h, base_theta, h) for h in heads]
    cache = {}
    rows = []
    for param, value, theta, h in runs:
        key = (theta, h)
        if key not in cache:
            run_cfg = replace(cfg, theta=theta, train=replace(cfg.train, heads=h))
            t = time.perf_counter()
            res = pl.run_pipeline(dataset, run_cfg)
            cache[key] = (res.report.to_dict(), time.perf_counter() - t)
            log.info("theta=%d heads=%d: %s", theta, h, cache[key][0])
        rep, sec = cache[key]
        rows.append({"parameter": param, "value": value, "theta": theta, "heads": h,
                     "TP": rep["TP"], "FP": rep["FP"], "FN": rep["FN"], "precision": rep["precision"],
                     "recall": rep["recall"], "F1": rep["F1"], "seconds": round(sec, 2)})
    return rows


SWEEP_FIELDS = ("parameter", "value", "theta", "heads", "TP", "FP", "FN", "precision", "recall", "F1", "seconds")


def rows_to_csv(rows: Sequence[dict], fields: Sequence[str] = SWEEP_FIELDS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def latency(n_channels: int = 50, theta: int = 60, n_windows: int = 50, seed: int = 0,
            cfg: pl.PipelineConfig | None = None) -> dict:
    """Mean wall time of the standalone online ``detect`` call, one window at a time.

    Builds a single-instance dataset with enough metrics that the serialized
    channel count equals ``n_channels``, fits it with a token training budget
    (latency does not depend on weights), then times ``detect`` at
    ``n_windows`` test minutes. Each call serializes the raw data it needs.
    """
    base = pl.PipelineConfig(theta=theta)
    # log and trace channel counts do not depend on the number of metrics
    probe = generate_synthetic(GeneratorConfig(duration_minutes=120, metrics_per_instance=1), seed)
    n_metrics = n_channels - (len(fit_serializer(probe, 60, base.serializer_config()).channel_names) - 1)
    if n_metrics < 1:
        raise ValueError(f"cannot reach {n_channels} channels")
    gcfg = GeneratorConfig(duration_minutes=max(12 * theta, 720), metrics_per_instance=n_metrics)
    dataset = generate_synthetic(gcfg, seed)
    cfg = cfg or replace(base, train=replace(base.train, epochs=1, windows_per_epoch=32), seed=seed)
    inst, matrix = pl.fit_instance(dataset, cfg)
    ends = inst.splits.test_ends(theta)
    picks = np.linspace(ends[0], ends[-1], n_windows).astype(int)
    times = []
    for c in picks:
        minute = inst.grid_start + int(c) * cfg.delta
        t = time.perf_counter()
        pl.detect(minute, inst, dataset, cfg.top_k)
        times.append(time.perf_counter() - t)
    return {"n_channels": len(inst.channel_names), "theta": theta, "windows": len(times),
            "mean_ms": 1000.0 * float(np.mean(times)), "max_ms": 1000.0 * float(np.max(times))}
