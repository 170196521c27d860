"""Wall time of one online detect call (serialize, stream, predict, score) per window."""

import argparse
import json

from fusiondetect.experiments import latency


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--channels", type=int, nargs="+", default=[14, 30, 50])
    ap.add_argument("--theta", type=int, default=60)
    ap.add_argument("--windows", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for n in args.channels:
        print(json.dumps(latency(n, args.theta, args.windows, args.seed)))


if __name__ == "__main__":
    main()
