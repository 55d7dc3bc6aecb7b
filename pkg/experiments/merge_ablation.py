#!/usr/bin/env python3
"""
merge_ablation.py – does merging help, and does the score point the right way?

Usage
-----
    python -m experiments.merge_ablation {direction,merge-count,strategies}

direction
    Drop the single lowest-scoring layer, then the single highest-scoring
    one. Pruning the unimportant layer should hurt less.
merge-count
    Prune n_prune layers and merge 0..n_prune of them with sign-sum.
strategies
    Discard-only against every merge strategy at n_merge merged layers.

The merge studies fine-tune every pruned variant for TOY_RECOVER_STEPS full
fine-tune steps before evaluating, unless --recover-steps says otherwise.
direction evaluates directly by default.

A one-line verdict on the directional check goes to stderr.
"""

import argparse
import sys

from experiments.common import TOY_RECOVER_STEPS, add_common_args, emit, recovery_train, setup
from igprune.analysis.ablations import (
    EVAL_COLUMNS,
    compare_strategies,
    importance_direction,
    prepare_experiment,
    sweep_merge_count,
)


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Merging and importance-direction ablations.")
    parser.add_argument("study", choices=["direction", "merge-count", "strategies"])
    add_common_args(parser)
    parser.set_defaults(recover_steps=None)
    parser.add_argument("--sparsity", type=float, default=0.8)
    return parser.parse_args()


def default_recover_steps(study: str) -> int:
    return 0 if study == "direction" else TOY_RECOVER_STEPS


def main() -> None:
    args = parse_args()
    config, model, data = setup(args)
    recover = default_recover_steps(args.study) if args.recover_steps is None else args.recover_steps
    exp = prepare_experiment(model, data, recovery_train(config), recover, progress=args.verbose)

    if args.study == "direction":
        rows = importance_direction(exp)
        emit(rows, ["pruned", "layer", *EVAL_COLUMNS], args.out)
        lowest, highest = rows
        ok = lowest["loss"] <= highest["loss"]
        print(f"lowest-score prune loss {lowest['loss']:.6f} <= highest {highest['loss']:.6f}: {ok}", file=sys.stderr)
    elif args.study == "merge-count":
        rows = sweep_merge_count(exp, config.n_prune, range(config.n_prune + 1), args.sparsity)
        emit(rows, ["merge_count", *EVAL_COLUMNS], args.out)
        ok = rows[1]["loss"] <= rows[0]["loss"]
        print(
            f"merging one layer ({rows[1]['loss']:.6f}) beats discarding ({rows[0]['loss']:.6f})"
            f" after {recover} recovery steps: {ok}",
            file=sys.stderr,
        )
    else:
        rows = compare_strategies(exp, config.n_prune, config.n_merge, sparsity_p=args.sparsity)
        emit(rows, ["strategy", *EVAL_COLUMNS], args.out)


if __name__ == "__main__":
    main()
