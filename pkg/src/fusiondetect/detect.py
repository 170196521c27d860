"""Online scoring: per-channel errors, robust normalization, EVT threshold, evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .telemetry import FailureLabel

IQR_FLOOR = 1e-6
MIN_CALIBRATION = 20
FORMAT_VERSION = 1


def channel_errors(prediction, observation) -> np.ndarray:
    prediction = np.asarray(prediction, dtype=float)
    observation = np.asarray(observation, dtype=float)
    if prediction.shape != observation.shape:
        raise ValueError(f"shape mismatch {prediction.shape} vs {observation.shape}")
    return np.abs(prediction - observation)


# ------------------------------------------------------------------ EVT (peaks over threshold)

@dataclass(frozen=True)
class GPDFit:
    gamma: float
    sigma: float
    method: str  # "grimshaw", "moments", "exponential" or "max"


def gpd_log_likelihood(Y: np.ndarray, gamma: float, sigma: float) -> float:
    if sigma <= 0:
        return -math.inf
    n = Y.size
    if gamma == 0.0:
        return -n * math.log(sigma) - float(Y.sum()) / sigma
    arg = 1.0 + gamma * Y / sigma
    if np.any(arg <= 0):
        return -math.inf
    return -n * math.log(sigma) - (1.0 + 1.0 / gamma) * float(np.log(arg).sum())


def _grimshaw(Y: np.ndarray, n_grid: int = 200, eps: float = 1e-8) -> GPDFit:
    """Maximum-likelihood GPD fit by Grimshaw's one-dimensional reduction."""
    Ym, YM, Ybar = float(Y.min()), float(Y.max()), float(Y.mean())

    def u(x):
        return 1.0 + np.log1p(x * Y).mean()

    def v(x):
        return (1.0 / (1.0 + x * Y)).mean()

    def w(x):
        return u(x) * v(x) - 1.0

    candidates = [GPDFit(0.0, Ybar, "grimshaw")]
    lo = -1.0 / YM
    intervals = [(lo + (abs(lo) * 1e-6 + eps), -eps)]
    if Ym > 0 and Ybar > Ym:
        intervals.append((2 * (Ybar - Ym) / (Ybar * Ym), 2 * (Ybar - Ym) / Ym ** 2))
    for a, b in intervals:
        if not a < b:
            continue
        grid = np.linspace(a, b, n_grid)
        vals = np.array([w(x) for x in grid])
        for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
            root = brentq(w, grid[i], grid[i + 1], xtol=1e-14, maxiter=200)
            gamma = u(root) - 1.0
            if gamma != 0.0:
                candidates.append(GPDFit(gamma, gamma / root, "grimshaw"))
    best = max(candidates, key=lambda c: gpd_log_likelihood(Y, c.gamma, c.sigma))
    if not np.isfinite(gpd_log_likelihood(Y, best.gamma, best.sigma)):
        raise ArithmeticError("likelihood search failed")
    return best


def _moments(Y: np.ndarray) -> GPDFit:
    mean = float(Y.mean())
    var = float(Y.var())
    if var <= 0:
        return GPDFit(0.0, mean, "exponential")
    ratio = mean * mean / var
    return GPDFit(0.5 * (1.0 - ratio), 0.5 * mean * (ratio + 1.0), "moments")


def fit_gpd(peaks: np.ndarray) -> GPDFit:
    peaks = np.asarray(peaks, dtype=float)
    if peaks.size < 8:
        return _moments(peaks)
    try:
        return _grimshaw(peaks)
    except (ArithmeticError, ValueError, RuntimeError):
        return _moments(peaks)


def pot_quantile(t0: float, gamma: float, sigma: float, q: float, n_total: int, n_exceed: int) -> float:
    r = q * n_total / n_exceed
    if gamma == 0.0:
        return t0 - sigma * math.log(r)
    return t0 + (sigma / gamma) * (r ** (-gamma) - 1.0)


@dataclass(frozen=True)
class EVTFit:
    t0: float
    gamma: float
    sigma: float
    q: float
    n_total: int
    n_exceed: int
    threshold: float
    method: str


def evt_fit(scores, q: float = 1e-3, level: float = 0.98) -> EVTFit:
    """Peaks-over-threshold estimate of the (1 - q) score quantile."""
    scores = np.asarray(scores, dtype=float)
    if not 0 < q <= 0.1:
        raise ValueError("risk q must lie in (0, 0.1]")
    t0 = float(np.percentile(scores, 100.0 * level))
    peaks = scores[scores > t0] - t0
    if peaks.size < 2:
        top = float(scores.max())
        return EVTFit(t0, 0.0, 0.0, q, scores.size, int(peaks.size), top, "max")
    fit = fit_gpd(peaks)
    z = pot_quantile(t0, fit.gamma, fit.sigma, q, scores.size, peaks.size)
    return EVTFit(t0, fit.gamma, fit.sigma, q, scores.size, int(peaks.size), z, fit.method)


# ------------------------------------------------------------------ scoring state

@dataclass
class ScoreState:
    channel_names: list[str]
    medians: np.ndarray
    iqrs: np.ndarray
    calibration_scores: np.ndarray
    evt: EVTFit
    iqr_floor: float = IQR_FLOOR

    @property
    def threshold(self) -> float:
        return self.evt.threshold

    def normalized(self, errors) -> np.ndarray:
        return (np.asarray(errors, dtype=float) - self.medians) / self.iqrs

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "channel_names": list(self.channel_names),
                "medians": self.medians.tolist(), "iqrs": self.iqrs.tolist(),
                "calibration_scores": self.calibration_scores.tolist(),
                "evt": asdict(self.evt), "iqr_floor": self.iqr_floor}

    @classmethod
    def from_dict(cls, doc: dict) -> "ScoreState":
        if doc.get("format_version", 0) > FORMAT_VERSION:
            raise ValueError(f"score state format {doc['format_version']} is newer than {FORMAT_VERSION}")
        return cls(list(doc["channel_names"]), np.array(doc["medians"]), np.array(doc["iqrs"]),
                   np.array(doc["calibration_scores"]), EVTFit(**doc["evt"]), doc["iqr_floor"])


def robust_stats(errors: np.ndarray, floor: float = IQR_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Per-column median and linear-interpolation IQR, IQR floored."""
    errors = np.asarray(errors, dtype=float)
    med = np.median(errors, axis=0)
    q25, q75 = np.percentile(errors, [25.0, 75.0], axis=0)
    return med, np.maximum(q75 - q25, floor)


def failure_score(errors, state: ScoreState) -> float:
    """max_n (ERR_n - median_n) / IQR_n."""
    return float(np.max(state.normalized(errors), axis=-1))


def calibrate(errors, channel_names: Sequence[str] | None = None, q: float = 1e-3,
              level: float = 0.98, floor: float = IQR_FLOOR) -> ScoreState:
    """errors: (T, N) absolute prediction errors over a held-out normal window."""
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    if errors.shape[0] < MIN_CALIBRATION:
        raise ValueError(f"need at least {MIN_CALIBRATION} calibration points, got {errors.shape[0]}")
    med, iqr = robust_stats(errors, floor)
    names = list(channel_names) if channel_names is not None else [f"ch{i}" for i in range(errors.shape[1])]
    scores = ((errors - med) / iqr).max(axis=1)
    return ScoreState(names, med, iqr, scores, evt_fit(scores, q, level), floor)


def evt_threshold(state: ScoreState, q: float | None = None, level: float = 0.98) -> float:
    return evt_fit(state.calibration_scores, state.evt.q if q is None else q, level).threshold


# ------------------------------------------------------------------ verdicts and evaluation

@dataclass(frozen=True)
class FailureVerdict:
    timestamp: int  # epoch seconds of the window's last minute
    score: float
    threshold: float
    is_failure: bool
    top_channels: tuple[tuple[str, float], ...] = ()
    instance_id: str | None = None

    def __post_init__(self):
        if self.is_failure != (self.score > self.threshold):
            raise AssertionError("verdict must fire exactly when score exceeds threshold")

    def to_json(self) -> str:
        return json.dumps({"instance_id": self.instance_id, "timestamp": self.timestamp,
                           "score": self.score, "threshold": self.threshold,
                           "is_failure": self.is_failure,
                           "top_channels": [[n, v] for n, v in self.top_channels]}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "FailureVerdict":
        r = json.loads(line)
        return cls(int(r["timestamp"]), float(r["score"]), float(r["threshold"]), bool(r["is_failure"]),
                   tuple((str(n), float(v)) for n, v in r.get("top_channels", [])), r.get("instance_id"))


def make_verdict(timestamp: int, errors, state: ScoreState, top_k: int = 5,
                 instance_id: str | None = None) -> FailureVerdict:
    norm = state.normalized(errors)
    score = float(norm.max())
    order = np.argsort(-norm, kind="stable")[:top_k]
    top = tuple((state.channel_names[i], float(norm[i])) for i in order)
    return FailureVerdict(int(timestamp), score, state.threshold, score > state.threshold, top, instance_id)


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp > 0 else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn > 0 else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def __add__(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"TP": self.tp, "FP": self.fp, "FN": self.fn, "precision": self.precision,
                "recall": self.recall, "F1": self.f1}

    def table(self) -> str:
        d = self.to_dict()
        return "\n".join(f"{k:<10}{d[k]:>10.4f}" if isinstance(d[k], float) else f"{k:<10}{d[k]:>10d}"
                         for k in ("TP", "FP", "FN", "precision", "recall", "F1"))


def evaluate(verdicts: Iterable[FailureVerdict], labels: Iterable[FailureLabel],
             grace: int = 0) -> EvalReport:
    """Segment point-adjusted precision/recall/F1.

    A labeled segment is one TP if any verdict inside it fires, else one FN.
    Runs of consecutive firing verdicts outside every segment count one FP
    each. Firings within ``grace`` seconds after a segment's end are neither
    credited nor counted as false alarms.
    Verdicts without an instance id are matched against every label.
    """
    verdicts = list(verdicts)
    labels = list(labels)
    keys = {v.instance_id for v in verdicts}
    report = EvalReport(0, 0, 0)
    for key in sorted(keys, key=str):
        mine = sorted((v for v in verdicts if v.instance_id == key), key=lambda v: v.timestamp)
        segs = [l for l in labels if key is None or l.instance_id == key]
        report += _evaluate_one(mine, segs, grace)
    if not verdicts:
        report = EvalReport(0, 0, len(labels))
    else:
        # labels for instances that emitted no verdicts are missed
        if None not in keys:
            report += EvalReport(0, 0, sum(1 for l in labels if l.instance_id not in keys))
    return report


def _evaluate_one(verdicts: list[FailureVerdict], segments: list[FailureLabel], grace: int) -> EvalReport:
    tp = sum(1 for s in segments
             if any(v.is_failure and s.start_ts <= v.timestamp <= s.end_ts for v in verdicts))
    fp = 0
    in_run = False
    for v in verdicts:
        inside = any(s.start_ts <= v.timestamp <= s.end_ts + grace for s in segments)
        if v.is_failure and not inside:
            if not in_run:
                fp += 1
            in_run = True
        else:
            in_run = False
    return EvalReport(tp, fp, len(segments) - tp)
