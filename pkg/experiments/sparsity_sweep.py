#!/usr/bin/env python3
"""
sparsity_sweep.py – held-out quality against the donor sparsity fraction p.

Usage
-----
    python -m experiments.sparsity_sweep [--sparsities 0.5,0.6,0.7,0.8,0.9]

Prunes n_prune layers, merges n_merge of them with sign-sum merging at every
p and reports loss, perplexity, accuracy and the achieved ratio. The best p
(lowest loss) is repeated on stderr.
"""

import argparse
import sys

from experiments.common import add_common_args, emit, recovery_train, setup
from igprune.analysis.ablations import EVAL_COLUMNS, prepare_experiment, sweep_sparsity


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Sweep the merge sparsity fraction.")
    add_common_args(parser)
    parser.add_argument(
        "--sparsities",
        type=lambda s: [float(x) for x in s.split(",")],
        default=[0.5, 0.6, 0.7, 0.8, 0.9],
    )
    return parser.parse_args()


def main() -> None:
    args = parse_args()
    config, model, data = setup(args)
    exp = prepare_experiment(model, data, recovery_train(config), args.recover_steps, progress=args.verbose)
    rows = sweep_sparsity(exp, config.n_prune, config.n_merge, args.sparsities)
    emit(rows, ["sparsity_p", *EVAL_COLUMNS], args.out)
    best = min(rows, key=lambda r: (r["loss"], r["sparsity_p"]))
    print(f"best p: {best['sparsity_p']} (loss {best['loss']:.6f})", file=sys.stderr)


if __name__ == "__main__":
    main()
