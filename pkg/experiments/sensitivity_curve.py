#!/usr/bin/env python3
"""
sensitivity_curve.py – how early the layer ranking settles.

One adapter run over all T steps; the layer ranking is snapshotted at a set
of step fractions and compared with the ranking at step T by top-k overlap.

Usage
-----
    python -m experiments.sensitivity_curve [--k 2] [--out curve.csv]

Output columns: step, fraction, topk_overlap, ranking. The overlap at 1% of
T is repeated on stderr.
"""

import argparse
import sys

from experiments.common import add_common_args, emit, setup
from igprune.analysis.sensitivity import STEP_FRACTIONS, run_sensitivity


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Top-k ranking overlap against the final step.")
    add_common_args(parser)
    parser.add_argument("--k", type=int, default=2, help="top-k size (default: 2)")
    parser.add_argument(
        "--fractions",
        type=lambda s: [float(x) for x in s.split(",")],
        default=list(STEP_FRACTIONS),
        help="comma-separated step fractions",
    )
    return parser.parse_args()


def main() -> None:
    args = parse_args()
    config, model, data = setup(args)
    result = run_sensitivity(model, data, config.train, args.fractions, args.k, progress=args.verbose)
    rows = result.rows()
    emit(rows, ["step", "fraction", "topk_overlap", "ranking"], args.out)
    for row in rows:
        if row["fraction"] == 0.01:
            print(f"top-{args.k} overlap at 1% of T: {row['topk_overlap']:.3f}", file=sys.stderr)


if __name__ == "__main__":
    main()
