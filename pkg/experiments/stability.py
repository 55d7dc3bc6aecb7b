#!/usr/bin/env python3
"""
stability.py – ranking stability under less data or fewer probe steps.

Usage
-----
    python -m experiments.stability data-size [--fractions 0.01,0.1,0.3,1.0]
    python -m experiments.stability steps [--fractions 0.0002,0.0005,0.0008,0.01]

data-size
    Probe on a random share of the training split; compare the ranking with
    the full-data one and evaluate the model pruned with it.
steps
    Prune with the IGIA accumulated over a share of T steps and compare its
    ranking with the one at step T.
"""

import argparse

from experiments.common import add_common_args, emit, recovery_train, setup
from igprune.analysis.ablations import EVAL_COLUMNS, data_size_stability, step_count_ablation


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Ranking stability ablations.")
    parser.add_argument("study", choices=["data-size", "steps"])
    add_common_args(parser)
    parser.add_argument("--fractions", type=lambda s: [float(x) for x in s.split(",")])
    parser.add_argument("--k", type=int, help="top-k size (default: ceil(0.6 * layers))")
    return parser.parse_args()


def main() -> None:
    args = parse_args()
    config, model, data = setup(args)
    if args.study == "data-size":
        driver, fractions = data_size_stability, args.fractions or [0.01, 0.1, 0.3, 1.0]
        columns = ["fraction", "samples", *EVAL_COLUMNS, "topk_overlap", "spearman", "ranking"]
    else:
        driver, fractions = step_count_ablation, args.fractions or [0.0002, 0.0005, 0.0008, 0.01]
        columns = ["fraction", "steps", *EVAL_COLUMNS, "topk_overlap", "ranking"]
    rows = driver(
        model,
        data,
        recovery_train(config),
        fractions,
        prune_count=config.n_prune,
        merge_count=config.n_merge,
        recover_steps=args.recover_steps,
        k=args.k,
    )
    emit(rows, columns, args.out)


if __name__ == "__main__":
    main()
