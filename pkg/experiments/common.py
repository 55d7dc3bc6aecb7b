"""Seeded desk-scale setup shared by the experiment scripts."""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from igprune.analysis.metrics import write_csv
from igprune.io.config_file import RunConfig, load_config_file
from igprune.model.config import ModelConfig
from igprune.model.transformer import ModelState, build_model
from igprune.train.datasets import Dataset, make_dataset
from igprune.train.trainer import TrainConfig, run_finetune

log = logging.getLogger(__name__)

# alpha 2 matches the common alpha / rank scaling of 16 / 8
TOY_CONFIG = RunConfig(
    model=ModelConfig(lora_alpha=2.0),
    train=TrainConfig(total_steps=2000, probe_steps=20, batch_size=16, learning_rate=0.02),
    n_prune=2,
    n_merge=1,
)
TOY_PRETRAIN_STEPS = 300
# merged and discard-only variants compare after this many full fine-tune steps
TOY_RECOVER_STEPS = 300


def add_common_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="key=value run configuration (default: the 4-layer toy run)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--pretrain-steps",
        type=int,
        default=TOY_PRETRAIN_STEPS,
        help=f"full fine-tune steps from the random init to the model being pruned (default: {TOY_PRETRAIN_STEPS})",
    )
    parser.add_argument(
        "--recover-steps", type=int, default=0, help="full fine-tune steps after pruning, 0 evaluates directly"
    )
    parser.add_argument("--out", type=Path, help="CSV output (default: stdout)")
    parser.add_argument("-v", "--verbose", action="store_true")


def prepare_toy(
    config: RunConfig = TOY_CONFIG,
    seed: int = 0,
    pretrain_steps: int = TOY_PRETRAIN_STEPS,
    *,
    progress: bool = False,
) -> tuple[RunConfig, ModelState, Dataset]:
    """Seeded config, data and the model to prune: a fresh init after ``pretrain_steps`` of full fine-tune."""
    config = config.with_values(seed=seed)
    data = make_dataset(config.task_spec(), config.dataset_size, config.data_seed)
    model = build_model(config.model, config.train.seed)
    if pretrain_steps:
        pretrain = dataclasses.replace(config.train, mode="fft", total_steps=pretrain_steps, probe_steps=0)
        model = run_finetune(model, data, pretrain, progress=progress).model
    return config, model, data


def recovery_train(config: RunConfig) -> TrainConfig:
    """
    Settings handed to ``prepare_experiment``. The probe always runs with
    adapters; the recovery after pruning is a full fine-tune with the run's
    learning rate, batches and seed.
    """
    return dataclasses.replace(config.train, mode="fft")


def setup(args: argparse.Namespace) -> tuple[RunConfig, ModelState, Dataset]:
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    config = load_config_file(args.config, TOY_CONFIG) if args.config else TOY_CONFIG
    return prepare_toy(config, args.seed, args.pretrain_steps, progress=args.verbose)


def emit(rows: list[dict], columns: list[str], out: Path | None) -> None:
    if out is None:
        write_csv(rows, columns, sys.stdout)
        return
    with open(out, "w", encoding="utf-8", newline="") as f:
        write_csv(rows, columns, f)
