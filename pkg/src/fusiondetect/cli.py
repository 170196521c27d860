"""Command-line entry point: simulate, fit-serializer, train, detect, evaluate, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal failure.
Log verbosity comes from ``FUSIONDETECT_LOG_LEVEL`` (default WARNING) or ``-v``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace

from . import detect as det
from . import pipeline as pl
from .graphstream import AdjacencyTensor
from .model import GraphError, TrainingError, training_windows
from .scenarios import benchmark_config
from .serialize import fit_serializer, instance_grid
from .telemetry import (DataError, FailureLabel, GeneratorConfig, generate_synthetic, load_dataset, load_labels,
                        write_dataset)

log = logging.getLogger("fusiondetect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
LOG_ENV = "FUSIONDETECT_LOG_LEVEL"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _atomic_text(path: str, text: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ------------------------------------------------------------------ config handling

def load_config(args) -> pl.PipelineConfig:
    cfg = pl.PipelineConfig.load(args.config) if args.config else pl.PipelineConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "q", None) is not None:
        over["q"] = args.q
    if getattr(args, "theta", None) is not None:
        over["theta"] = args.theta
    return replace(cfg, **over) if over else cfg


def _dataset(cfg: pl.PipelineConfig):
    if not os.path.isdir(cfg.dataset_dir):
        raise FileNotFoundError(f"dataset directory not found: {cfg.dataset_dir}")
    return load_dataset(cfg.dataset_dir)


# ------------------------------------------------------------------ commands

def cmd_simulate(args) -> int:
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"no such config file: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            gcfg = GeneratorConfig.from_dict(json.load(fh))
    elif args.scenario == "benchmark":
        gcfg = benchmark_config(args.seed)
    else:
        gcfg = GeneratorConfig()
    out = args.out or "data"
    dataset = generate_synthetic(gcfg, args.seed)
    counts = write_dataset(dataset, out, {"seed": args.seed, "generator": gcfg.to_dict()})
    print(json.dumps({"out": out, "seed": args.seed, **counts}, sort_keys=True))
    return EXIT_OK


def cmd_fit_serializer(args) -> int:
    cfg = load_config(args)
    dataset = _dataset(cfg)
    out = args.out or cfg.artifacts_dir
    for iid in dataset.instance_ids:
        part = dataset.for_instance(iid)
        grid = instance_grid(part)
        cols = -(-(grid[1] - grid[0]) // cfg.delta)
        splits = pl.make_splits(cols, cfg)
        state = fit_serializer(part, grid[0] + splits.train_end * cfg.delta, cfg.serializer_config(), grid)
        os.makedirs(os.path.join(out, iid), exist_ok=True)
        _atomic_text(os.path.join(out, iid, "serializer.json"), json.dumps(state.to_dict(), sort_keys=True) + "\n")
        print(f"{iid}: {len(state.channel_names)} channels, {len(state.clusters)} log clusters")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = args.out or cfg.artifacts_dir
    dataset = _dataset(cfg)
    instances = {}
    for iid in dataset.instance_ids:
        t = time.perf_counter()
        inst, _ = pl.fit_instance(dataset.for_instance(iid), cfg)
        instances[iid] = inst
        hist = inst.model.loss_history
        print(f"{iid}: {len(inst.channel_names)} channels, {len(hist)} epochs, "
              f"loss {hist[0] if hist else float('nan'):.4g} -> {hist[-1] if hist else float('nan'):.4g}, "
              f"threshold {inst.scores.threshold:.4g}, {time.perf_counter() - t:.1f}s")
    pl.save_run(instances, cfg, out)
    print(f"artifacts written to {out} (config {cfg.config_hash()})")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = load_config(args)
    out = args.out or cfg.verdicts_path
    instances = pl.load_run(cfg, args.artifacts)
    dataset = _dataset(cfg)
    lines = []
    n, elapsed, fired = 0, 0.0, 0
    for iid, inst in instances.items():
        part = dataset.for_instance(iid)
        matrix = pl.instance_matrix(inst, part)
        ends = inst.splits.test_ends(inst.theta)
        t = time.perf_counter()
        verdicts = pl.detect_columns(inst, matrix.values, ends, cfg.top_k)
        elapsed += time.perf_counter() - t
        n += len(verdicts)
        fired += sum(v.is_failure for v in verdicts)
        lines += [v.to_json() for v in verdicts]
    _atomic_text(out, "".join(line + "\n" for line in lines))
    per = 1000.0 * elapsed / max(n, 1)
    print(f"verdicts={n} fired={fired} mean_window_ms={per:.3f} out={out}")
    return EXIT_OK


def read_verdicts(path) -> list[det.FailureVerdict]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such verdict file: {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(det.FailureVerdict.from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{i}: bad verdict: {exc}") from None
    return out


def read_labels(path) -> list[FailureLabel]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such label file: {path}")
    return list(load_labels(path))


def cmd_evaluate(args) -> int:
    cfg = load_config(args)
    verdicts = read_verdicts(args.verdicts or cfg.verdicts_path)
    labels = read_labels(args.labels or os.path.join(cfg.dataset_dir, "labels.jsonl"))
    if verdicts and any(v.instance_id is not None for v in verdicts):
        # only labels that overlap the scored span of their instance
        spans = {}
        for v in verdicts:
            lo, hi = spans.get(v.instance_id, (v.timestamp, v.timestamp))
            spans[v.instance_id] = (min(lo, v.timestamp), max(hi, v.timestamp))
        labels = [l for l in labels if l.instance_id in spans
                  and l.end_ts >= spans[l.instance_id][0] and l.start_ts <= spans[l.instance_id][1]]
    report = det.evaluate(verdicts, labels, args.grace * 60)
    doc = json.dumps(report.to_dict(), sort_keys=True)
    print(doc)
    print(report.table())
    if args.out:
        _atomic_text(args.out, doc + "\n")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = args.path
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file or directory: {path}")
    if args.kind == "adjacency":
        if os.path.isdir(path):
            path = os.path.join(path, "adjacency.json")
            if not os.path.exists(path):
                raise FileNotFoundError(f"no such file: {path}")
        with open(path, encoding="utf-8") as fh:
            text = AdjacencyTensor.from_dict(json.load(fh)).to_csv()
    elif args.kind == "scores":
        rows = ["instance_id,timestamp,score,threshold,is_failure"]
        for v in read_verdicts(path):
            rows.append(f"{v.instance_id or ''},{v.timestamp},{v.score!r},{v.threshold!r},{int(v.is_failure)}")
        text = "\n".join(rows) + "\n"
    else:  # attention
        cfg = load_config(args)
        inst = pl.load_instance(path)
        dataset = _dataset(cfg).for_instance(inst.instance_id)
        X = pl.instance_matrix(inst, dataset).values
        col = inst.splits.train_end - 1 if args.column is None else args.column
        if not inst.theta - 1 <= col < X.shape[1]:
            raise DataError(f"column {col} outside [{inst.theta - 1}, {X.shape[1]})")
        fw = inst.model.predict(inst.adjacency.slices, training_windows(X, [col], inst.theta))
        text = json.dumps({
            "instance_id": inst.instance_id,
            "timestamp": (inst.grid_start + col * inst.serializer.config.delta) * 60,
            "channels": inst.channel_names,
            "meta_path": fw.meta_path.tolist(),
            "gt_weights": inst.model.params["gt_w"].tolist(),
            # per head, averaged over the window's snapshots
            "attention": fw.attention[0].mean(axis=0).tolist(),
        }, sort_keys=True) + "\n"
    if args.out:
        _atomic_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fusiondetect", description="Multimodal failure detection for service instances.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON config file")
        if seed:
            sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output path")
        return sp

    s = common(sub.add_parser("simulate", help="generate a synthetic labeled dataset"), seed=False)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scenario", choices=("default", "benchmark"), default="default",
                   help="built-in generator settings when --config is not given")
    s.set_defaults(func=cmd_simulate)

    for name, func, hlp in (("fit-serializer", cmd_fit_serializer, "fit per-instance serializers only"),
                            ("train", cmd_train, "fit serializers, adjacency, model and thresholds"),
                            ("detect", cmd_detect, "score the test split and write verdict JSONL")):
        s = common(sub.add_parser(name, help=hlp))
        s.add_argument("--q", type=float, help="EVT risk level")
        s.add_argument("--theta", type=int, help="window length in minutes")
        if name == "detect":
            s.add_argument("--artifacts", help="artifact directory (default from config)")
        s.set_defaults(func=func)

    s = common(sub.add_parser("evaluate", help="segment-adjusted precision/recall/F1"), seed=False)
    s.add_argument("--verdicts")
    s.add_argument("--labels")
    s.add_argument("--grace", type=int, default=0,
                   help="minutes after a segment in which firings are ignored (default 0)")
    s.set_defaults(func=cmd_evaluate)

    s = common(sub.add_parser("inspect", help="dump adjacency, attention or score series"), seed=False)
    s.add_argument("kind", choices=("adjacency", "attention", "scores"))
    s.add_argument("path", help="adjacency.json / instance artifact dir / verdicts.jsonl")
    s.add_argument("--column", type=int, help="window end column for attention (default: last training column)")
    s.set_defaults(func=cmd_inspect)
    return p


def _setup_logging(verbose: int) -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if verbose:
        level = "INFO" if verbose == 1 else "DEBUG"
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, pl.StageError):
        exc = exc.cause
    if isinstance(exc, (UsageError, pl.ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, (AssertionError, GraphError, TrainingError, FloatingPointError)):
        return EXIT_INTERNAL
    # malformed files, configs and artifacts surface as ValueError subclasses or OS errors
    if isinstance(exc, (DataError, pl.ArtifactError, OSError, ValueError, IndexError)):
        return EXIT_DATA
    return EXIT_INTERNAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = _exit_code(exc)
        print(f"fusiondetect {args.command}: {exc}", file=sys.stderr)
        if code == EXIT_INTERNAL:
            log.debug("internal failure", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
