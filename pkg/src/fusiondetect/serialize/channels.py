"""Minute-aligned data channels built from each modality."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from ..telemetry import DataError, MetricSample, Span


class Modality(str, Enum):
    METRIC = "Metric"
    LOG = "Log"
    TRACE = "Trace"


MODALITY_INDEX = {Modality.METRIC: 0, Modality.LOG: 1, Modality.TRACE: 2}
TRACE_FEATURES = ("rt_mean", "rt_median", "rt_range", "rt_std")


@dataclass(frozen=True)
class DataChannel:
    name: str
    modality: Modality
    values: np.ndarray
    grid_start: int  # epoch minute of values[0]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise DataError(f"channel {self.name} has non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def grid_end(self) -> int:
        return self.grid_start + len(self.values)


def normalize_metric(series, norm: float | None = None) -> np.ndarray:
    """Scale to unit L2 norm; ``norm`` is the stored training-split norm when given."""
    series = np.asarray(series, dtype=float)
    if norm is None:
        norm = float(np.linalg.norm(series))
    if norm == 0.0:
        return np.zeros_like(series)
    return series / norm


def metric_series(samples: Sequence[MetricSample], grid_start: int, n_minutes: int) -> np.ndarray:
    """Per-minute mean of one metric; gaps carry the last seen value forward."""
    sums = np.zeros(n_minutes)
    counts = np.zeros(n_minutes)
    for s in samples:
        k = s.timestamp // 60 - grid_start
        if 0 <= k < n_minutes:
            sums[k] += s.value
            counts[k] += 1
    if not counts.any():
        return sums
    out = np.divide(sums, counts, out=np.zeros(n_minutes), where=counts > 0)
    have = np.flatnonzero(counts > 0)
    idx = np.maximum.accumulate(np.where(counts > 0, np.arange(n_minutes), -1))
    idx[idx < 0] = have[0]
    return out[idx]


def window_counts(minutes: np.ndarray, cluster_ids: np.ndarray, n_clusters: int,
                  n_minutes: int, theta: int) -> np.ndarray:
    """Counts per cluster in the length-``theta`` window ending at each minute, plus a total row.

    ``minutes`` are grid offsets; out-of-grid entries are ignored. Windows are
    truncated at the series start.
    """
    per_minute = np.zeros((n_clusters + 1, n_minutes))
    minutes = np.asarray(minutes, dtype=int)
    cluster_ids = np.asarray(cluster_ids, dtype=int)
    ok = (minutes >= 0) & (minutes < n_minutes)
    np.add.at(per_minute, (cluster_ids[ok], minutes[ok]), 1.0)
    per_minute[n_clusters] = per_minute[:n_clusters].sum(0)
    csum = np.concatenate([np.zeros((n_clusters + 1, 1)), np.cumsum(per_minute, axis=1)], axis=1)
    hi = np.arange(1, n_minutes + 1)
    lo = np.maximum(hi - theta, 0)
    return csum[:, hi] - csum[:, lo]


def trace_window_stats(spans: Sequence[Span], grid_start: int, n_minutes: int, theta: int,
                       with_status: bool) -> np.ndarray:
    """Rows: mean, median, range, population std of RT per window (+ non-success count).

    Status code 0 is success; any other code counts as non-success.
    Empty windows yield zeros.
    """
    rows = 5 if with_status else 4
    out = np.zeros((rows, n_minutes))
    if not spans:
        return out
    minute = np.array([s.start_ts // 60000 - grid_start for s in spans])
    rt = np.array([s.duration_ms for s in spans], dtype=float)
    bad = np.array([0 if s.status_code in (None, 0) else 1 for s in spans], dtype=float)
    order = np.argsort(minute, kind="stable")
    minute, rt, bad = minute[order], rt[order], bad[order]
    ends = np.searchsorted(minute, np.arange(n_minutes), side="right")
    starts = np.searchsorted(minute, np.arange(n_minutes) - theta + 1, side="left")
    for m in range(n_minutes):
        a, b = starts[m], ends[m]
        if b <= a:
            continue
        w = rt[a:b]
        out[0, m] = w.mean()
        out[1, m] = np.median(w)
        out[2, m] = w.max() - w.min()
        out[3, m] = w.std()
        if with_status:
            out[4, m] = bad[a:b].sum()
    return out


def align_clocks(channels: Sequence[DataChannel]) -> tuple[np.ndarray, int]:
    """Trim every channel to the common minute grid; returns (N x tau matrix, grid_start)."""
    if not channels:
        raise DataError("no channels to align")
    start = max(c.grid_start for c in channels)
    end = min(c.grid_end for c in channels)
    if end <= start:
        raise DataError("channel grids do not overlap")
    rows = [c.values[start - c.grid_start: end - c.grid_start] for c in channels]
    return np.vstack(rows), start
