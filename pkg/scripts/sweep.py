"""F1 against window length theta and attention heads H on the benchmark dataset.

One-at-a-time sweep around theta=60, H=6; writes a CSV with one row per run.
"""

import argparse
import logging
from dataclasses import replace

from fusiondetect.experiments import rows_to_csv, sweep
from fusiondetect.scenarios import benchmark_config, benchmark_pipeline_config
from fusiondetect.telemetry import generate_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--thetas", type=int, nargs="+", default=[10, 60, 120])
    ap.add_argument("--heads", type=int, nargs="+", default=[2, 6, 10])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--windows-per-epoch", type=int, default=256)
    ap.add_argument("--out", default="sweep.csv")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cfg = benchmark_pipeline_config(seed=args.seed)
    cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs, windows_per_epoch=args.windows_per_epoch))
    dataset = generate_synthetic(benchmark_config(args.seed), args.seed)
    text = rows_to_csv(sweep(dataset, cfg, args.thetas, args.heads))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")


if __name__ == "__main__":
    main()
