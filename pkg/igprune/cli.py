"""Command-line pipeline: init -> probe -> score -> plan -> prune -> finetune -> eval.

Artifacts are IGPK containers (checkpoints, IGIA sets), plan directive files
and CSV/JSON reports. Reports go to standard output or ``--out``; logs and
errors go to standard error.
"""

import argparse
import dataclasses
import logging
import os
import sys
from typing import Callable, Sequence, TextIO

from igprune.analysis.metrics import evaluate, param_report, write_csv
from igprune.analysis.sensitivity import STEP_FRACTIONS, run_sensitivity
from igprune.importance.igia import compute_igia
from igprune.importance.plan import format_plan_report, make_prune_plan
from igprune.importance.scoring import layer_scores, rank_layers
from igprune.io.checkpoint import load_igia, load_model, save_igia, save_model
from igprune.io.config_file import RunConfig, load_config_file
from igprune.io.plan_format import load_plan, save_plan
from igprune.merge.layer_merge import MergeStrategy
from igprune.model.surgery import block_parameter_counts, reset_adapters
from igprune.model.transformer import ModelState, build_model
from igprune.prune import apply_prune
from igprune.train.datasets import Dataset, make_dataset
from igprune.train.trainer import run_finetune

__all__ = ["cli_main", "build_parser"]

log = logging.getLogger(__name__)

SEED_ENV = "IGPK_SEED"
LOG_LEVEL_ENV = "IGPK_LOG_LEVEL"


class CliError(ValueError):
    pass


def _fraction_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value run configuration file")
    parser.add_argument("--seed", type=int, help=f"seed for weights and batch order (fallback: ${SEED_ENV}, then 0)")
    parser.add_argument("--log-level", help=f"logging level (fallback: ${LOG_LEVEL_ENV}, then WARNING)")
    parser.add_argument("--progress", action="store_true", help="show progress bars on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igprune", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="build a freshly initialised checkpoint")
    p.add_argument("--out", required=True)

    p = sub.add_parser("probe", help="adapter probe run, writes the IGIA set")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps-fraction", type=float, help="probe steps as a fraction of total_steps")

    p = sub.add_parser("score", help="layer scores and ranking as CSV")
    p.add_argument("--igia", required=True)
    p.add_argument("--out")

    p = sub.add_parser("plan", help="select layers to prune and merge")
    p.add_argument("--igia", required=True)
    p.add_argument("--model", help="checkpoint supplying per-layer parameter counts")
    p.add_argument("--n", type=int, help="layers to prune (default: n_prune)")
    p.add_argument("--merge", type=int, help="pruned layers to merge (default: n_merge)")
    p.add_argument("--protect", type=int, nargs="*", help="layers never pruned (default: the first layer)")
    p.add_argument("--out", required=True, help="plan directive file")
    p.add_argument("--report", help="human-readable report (default: stdout)")

    p = sub.add_parser("prune", help="merge and drop layers")
    p.add_argument("--model", required=True)
    p.add_argument("--igia", required=True)
    p.add_argument("--plan", help="plan directive file; otherwise one is made from --n/--merge")
    p.add_argument("--n", type=int)
    p.add_argument("--merge", type=int)
    p.add_argument("--merge-strategy", choices=[s.value for s in MergeStrategy])
    p.add_argument("--sparsity", type=float, help="fraction of donor entries kept")
    p.add_argument("--tau", type=float, help="threshold of the adaptive strategies")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="parameter report (default: stdout)")

    p = sub.add_parser("finetune", help="fine-tune a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["fft", "lora"])
    p.add_argument("--steps", type=int, help="step budget (default: total_steps)")
    p.add_argument("--curve", help="CSV of per-step training loss")

    p = sub.add_parser("eval", help="held-out loss, perplexity and accuracy as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--out")

    p = sub.add_parser("sensitivity", help="ranking overlap against the final step, as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--fractions", type=_fraction_list, default=list(STEP_FRACTIONS))
    p.add_argument("--k", type=int, help="top-k size (default: ceil(0.6 * layers))")
    p.add_argument("--out")

    for p in sub.choices.values():
        _common(p)
    return parser


def _resolve_seed(args: argparse.Namespace) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise CliError(f"${SEED_ENV} must be an integer, got {env!r}") from None


def _run_config(args: argparse.Namespace) -> RunConfig:
    config = load_config_file(args.config) if args.config else RunConfig()
    seed = _resolve_seed(args)
    if seed is not None:
        config = config.with_values(seed=seed)
    return config


def _dataset(config: RunConfig, model: ModelState) -> Dataset:
    return make_dataset(config.task_spec(model.config.vocab_size), config.dataset_size, config.data_seed)


def _emit(text: str, path: str | None, stdout: TextIO) -> None:
    if path is None:
        stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _emit_csv(rows: list[dict], columns: Sequence[str], path: str | None, stdout: TextIO) -> None:
    if path is None:
        write_csv(rows, columns, stdout)
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        write_csv(rows, columns, f)


def cmd_init(args: argparse.Namespace, config: RunConfig, stdout: TextIO) -> None:
    save_model(args.out, build_model(config.model, config.train.seed))


def cmd_probe(args: argparse.Namespace, config: RunConfig, stdout: TextIO) -> None:
    model = load_model(args.model)
    train = config.train
    if args.steps_fraction is not None:
        train = dataclasses.replace(train, probe_steps=train.probe_steps_from_fraction(args.steps_fraction))
    igia = compute_igia(model, _dataset(config, model), train, progress=args.progress)
    save_igia(args.out, igia, {"train_config": train.to_json()})  # type: ignore[attr-defined]


def _layer_ids(igia: dict) -> list[int]:
    return sorted({int(name.split(".")[1]) for name in igia})


def cmd_score(args: argparse.Namespace, config: RunConfig, stdout: TextIO) -> None:
    igia = load_igia(args.igia)
    scores = layer_scores(igia, _layer_ids(igia))
    position = {j: i for i, j in enumerate(rank_layers(scores))}
    rows = [{"layer": j, "score": repr(s), "rank": position[j]} for j, s in scores.entries]
    _emit_csv(rows, ("layer", "score", "rank"), args.out, stdout)


def cmd_plan(args: argparse.Namespace, config: RunConfig, stdout: TextIO) -> None:
    igia = load_igia(args.igia)
    scores = layer_scores(igia, _layer_ids(igia))
    sizes = block_parameter_counts(load_model(args.model)) if args.model else None
    plan = make_prune_plan(
        scores,
        config.n_prune if args.n is None else args.n,
        config.n_merge if args.merge is None else args.merge,
        args.protect if args.protect else None,
        sizes,
    )
    save_plan(args.out, plan)
    _emit(format_plan_report(plan), args.report, stdout)


def cmd_prune(args: argparse.Namespace, config: RunConfig, stdout: TextIO) -> None:
    if args.plan and (args.n is not None or args.merge is not None):
        raise CliError("--plan cannot be combined with --n or --merge")
    model = load_model(args.model)
    igia = load_igia(args.igia)
    if args.plan:
        plan = load_plan(args.plan)
    else:
        scores = layer_scores(igia, model.layer_ids)
        plan = make_prune_plan(
            scores,
            config.n_prune if args.n is None else args.n,
            config.n_merge if args.merge is None else args.merge,
            layer_sizes=block_parameter_counts(model),
        )
    overrides = {"strategy": args.merge_strategy, "sparsity_p": args.sparsity, "tau": args.tau}
    merge_cfg = dataclasses.replace(config.merge, **{k: v for k, v in overrides.items() if v is not None})
    pruned = apply_prune(model, plan, igia, merge_cfg)
    save_model(args.out, pruned)
    _emit(param_report(model, pruned).format(), args.report, stdout)


def cmd_finetune(args: argparse.Namespace, config: RunConfig, stdout: TextIO) -> None:
    model = load_model(args.model)
    train = config.train
    if args.mode is not None:
        train = dataclasses.replace(train, mode=args.mode)
    if args.steps is not None:
        train = dataclasses.replace(train, total_steps=args.steps, probe_steps=min(train.probe_steps, args.steps))
    if train.mode == "lora":
        model = reset_adapters(model, train.seed)
    result = run_finetune(model, _dataset(config, model), train, progress=args.progress)
    save_model(args.out, result.model)
    if args.curve:
        rows = [{"step": i, "loss": repr(loss)} for i, loss in enumerate(result.losses, 1)]
        _emit_csv(rows, ("step", "loss"), args.curve, stdout)


def cmd_eval(args: argparse.Namespace, config: RunConfig, stdout: TextIO) -> None:
    model = load_model(args.model)
    report = evaluate(model, _dataset(config, model))
    _emit(report.to_json() + "\n", args.out, stdout)  # type: ignore[attr-defined]


def cmd_sensitivity(args: argparse.Namespace, config: RunConfig, stdout: TextIO) -> None:
    model = load_model(args.model)
    result = run_sensitivity(
        model, _dataset(config, model), config.train, args.fractions, args.k, progress=args.progress
    )
    _emit_csv(result.rows(), ("step", "fraction", "topk_overlap", "ranking"), args.out, stdout)


COMMANDS: dict[str, Callable[[argparse.Namespace, RunConfig, TextIO], None]] = {
    "init": cmd_init,
    "probe": cmd_probe,
    "score": cmd_score,
    "plan": cmd_plan,
    "prune": cmd_prune,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "sensitivity": cmd_sensitivity,
}


def _configure_logging(level: str | None) -> None:
    name = (level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
    if not isinstance(logging.getLevelName(name), int):
        raise CliError(f"unknown log level {name!r}")
    logging.basicConfig(
        level=name, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True
    )


def cli_main(argv: Sequence[str] | None = None, stdout: TextIO | None = None) -> int:
    """Run one subcommand; 0 on success, 1 on a reported error, 2 on a usage error."""
    stdout = stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    try:
        _configure_logging(args.log_level)
        config = _run_config(args)
        COMMANDS[args.command](args, config, stdout)
    except (ValueError, OSError, KeyError) as e:
        message = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
