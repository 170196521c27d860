"""Canned synthetic workloads used by the benchmark scripts and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .telemetry import FAILURE_TYPES, FailureScenario, GeneratorConfig

WEEK_MINUTES = 7 * 24 * 60


def benchmark_config(seed: int = 0, n_instances: int = 3, duration_minutes: int = WEEK_MINUTES,
                     n_failures: int = 12, split: float = 0.6, min_gap: int = 240,
                     durations: tuple[int, int] = (10, 30)) -> GeneratorConfig:
    """Multi-instance week with failures spread over the test split.

    Failure types cycle through every type; instances are assigned round-robin.
    Start minutes are jittered by ``seed`` but keep ``min_gap`` minutes between
    failures on the same instance so each one is a separate segment.
    """
    rng = np.random.default_rng([seed, 7])
    test_start = int(duration_minutes * split)
    per_instance = -(-n_failures // n_instances)
    slot = (duration_minutes - test_start - min_gap) // per_instance
    if slot < min_gap + durations[1]:
        raise ValueError("test split too short for the requested failures")
    failures = []
    for i in range(n_failures):
        inst = i % n_instances
        k = i // n_instances
        start = test_start + min_gap // 2 + k * slot + int(rng.integers(0, slot - min_gap - durations[1] + 1))
        dur = int(rng.integers(durations[0], durations[1] + 1))
        kind = FAILURE_TYPES[i % len(FAILURE_TYPES)]
        failures.append(FailureScenario(kind, inst, start, dur, metric=int(rng.integers(0, 4))))
    return GeneratorConfig(duration_minutes=duration_minutes, n_instances=n_instances,
                           failures=tuple(failures))


def benchmark_pipeline_config(**overrides) -> "PipelineConfig":
    """Pipeline settings used for the synthetic benchmark runs.

    Same architecture defaults as ``TrainConfig``; a larger step size and a
    fixed per-epoch window budget keep a week-long, three-instance run within
    a few minutes on one core.
    """
    from .model import TrainConfig
    from .pipeline import PipelineConfig
    train = TrainConfig(learning_rate=1e-2, epochs=30, windows_per_epoch=256, batch_size=32)
    return PipelineConfig(train=train, **overrides)
