import logging
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from dataclasses_json import dataclass_json
from tqdm import tqdm

from igprune.model.transformer import GradRecord, ModelState, backward, forward
from igprune.train.datasets import Dataset, iter_batches

__all__ = [
    "TrainingDivergedError",
    "TrainConfig",
    "GradientSink",
    "GradientRecorder",
    "TeeSink",
    "SGD",
    "StepResult",
    "ProbeSummary",
    "FinetuneResult",
    "train_step",
    "run_probe",
    "run_finetune",
]

log = logging.getLogger(__name__)

MODES = ("fft", "lora")


class TrainingDivergedError(ValueError):
    def __init__(self, message: str, linear: str | None = None) -> None:
        self.linear = linear
        super().__init__(message if linear is None else f"{message} (first offending linear: {linear})")


@dataclass_json
@dataclass(frozen=True)
class TrainConfig:
    """
    Attributes
    ----------
        total_steps (int): T, the step budget of a full fine-tune.
        probe_steps (int): t, the number of probe steps feeding the IGIA accumulator (t ≤ T).
        batch_size (int): Sequences per step.
        learning_rate (float): SGD step size.
        epochs (int): Passes over the training split; training stops at whichever of
            ``epochs`` or ``total_steps`` runs out first.
        mode (str): ``lora`` trains adapters only, ``fft`` trains every base parameter.
        seed (int): Seed for batch order.
        momentum (float): SGD momentum; 0 is plain SGD.
    """

    total_steps: int = 2000
    probe_steps: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    epochs: int = 1000
    mode: str = "lora"
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.total_steps < 0 or self.probe_steps < 0 or self.epochs < 0:
            raise ValueError("total_steps, probe_steps and epochs must be ≥ 0")
        if self.probe_steps > self.total_steps:
            raise ValueError(f"probe_steps ({self.probe_steps}) must not exceed total_steps ({self.total_steps})")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be ≥ 1, got {self.batch_size}")
        if self.learning_rate < 0 or not 0.0 <= self.momentum < 1.0:
            raise ValueError("learning_rate must be ≥ 0 and momentum in [0, 1)")

    def probe_steps_from_fraction(self, fraction: float) -> int:
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"steps fraction must lie in [0, 1], got {fraction}")
        return min(self.total_steps, math.ceil(fraction * self.total_steps - 1e-9))

    @classmethod
    def full_scale_profile(cls) -> "TrainConfig":
        return cls(total_steps=2000, probe_steps=20, batch_size=64, learning_rate=1e-5, epochs=3)


class GradientSink(Protocol):
    def __call__(self, record: GradRecord) -> object: ...


@dataclass
class GradientRecorder:
    """Sink keeping every delivered record, in arrival order."""

    records: list[GradRecord] = field(default_factory=list)

    def __call__(self, record: GradRecord) -> None:
        self.records.append(record)


class TeeSink:
    """Forwards every record to several sinks, in the order given."""

    def __init__(self, *sinks: GradientSink) -> None:
        self.sinks = sinks

    def __call__(self, record: GradRecord) -> None:
        for sink in self.sinks:
            sink(record)


class SGD:
    """
    Stochastic gradient descent with optional heavy-ball momentum.

    Attributes
    ----------
        learning_rate (float): Step size.
        momentum (float): Velocity decay; 0 disables the velocity buffers.

    Methods
    -------
        update(key, param, grad): in-place step of ``param``.
    """

    def __init__(self, *, learning_rate: float, momentum: float = 0.0) -> None:
        self.learning_rate = learning_rate
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def update(self, key: str, param: np.ndarray, grad: np.ndarray) -> None:
        if self.learning_rate == 0.0:
            return
        if self.momentum:
            v = self._velocity.get(key)
            v = grad.copy() if v is None else self.momentum * v + grad
            self._velocity[key] = v
            grad = v
        param -= self.learning_rate * grad


@dataclass
class StepResult:
    loss: float
    grads: GradRecord


@dataclass
class ProbeSummary:
    steps: int
    losses: list[float]


@dataclass
class FinetuneResult:
    model: ModelState
    losses: list[float]


def _first_bad_linear(record: GradRecord) -> str | None:
    for name, (grad_a, grad_b) in record.grads.items():
        if not (np.all(np.isfinite(grad_a)) and np.all(np.isfinite(grad_b))):
            return name
    return None


def train_step(
    model: ModelState,
    batch: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    *,
    step: int = 1,
    optimizer: SGD | None = None,
) -> StepResult:
    """One forward/backward/update on ``model`` in place; returns the pre-update adapter gradients."""
    x, y = batch
    optimizer = optimizer or SGD(learning_rate=config.learning_rate, momentum=config.momentum)
    _, tape = forward(model, x)
    result = backward(model, tape, y, full=config.mode == "fft", step=step)

    bad = _first_bad_linear(result.grads)
    if not math.isfinite(result.loss) or bad is not None:
        raise TrainingDivergedError(f"non-finite loss or gradient at step {step}: loss={result.loss}", bad)

    if config.mode == "lora":
        for lin in model.iter_linears():
            grad_a, grad_b = result.grads.grads[lin.name]
            optimizer.update(f"{lin.name}.A", lin.A, grad_a)
            optimizer.update(f"{lin.name}.B", lin.B, grad_b)
    else:
        full = result.full_grads or {}
        for lin in model.iter_linears():
            optimizer.update(f"{lin.name}.W", lin.W, full[lin.name])
        for block in model.layers:
            prefix = f"layer.{block.layer_id}"
            optimizer.update(f"{prefix}.attn_norm", block.attn_norm, full[f"{prefix}.attn_norm"])
            optimizer.update(f"{prefix}.mlp_norm", block.mlp_norm, full[f"{prefix}.mlp_norm"])
        optimizer.update("embed", model.embed, full["embed"])
        optimizer.update("head", model.head, full["head"])
        optimizer.update("final_norm", model.final_norm, full["final_norm"])

    return StepResult(result.loss, result.grads)


def run_probe(
    model: ModelState,
    data: Dataset,
    config: TrainConfig,
    sink: GradientSink,
    *,
    progress: bool = False,
) -> ProbeSummary:
    """
    Adapter-only fine-tune for ``config.probe_steps`` steps, streaming every
    step's adapter gradients to ``sink`` in step order.

    The probe trains a private copy, so the caller's model, base weights and
    adapters alike, is left untouched and the probe's adapter progress is
    discarded.
    """
    if config.mode != "lora":
        raise ValueError("the probe phase always trains adapters; set mode='lora'")
    if config.probe_steps == 0:
        return ProbeSummary(0, [])

    work = model.clone()
    optimizer = SGD(learning_rate=config.learning_rate, momentum=config.momentum)
    batches = iter_batches(data, config.batch_size, config.seed)
    losses = []
    log.info("probe: %d of %d steps on %s", config.probe_steps, config.total_steps, data.name)
    for step in tqdm(range(1, config.probe_steps + 1), desc="probe", disable=not progress):
        _, x, y = next(batches)
        result = train_step(work, (x, y), config, step=step, optimizer=optimizer)
        sink(result.grads)
        losses.append(result.loss)
        log.debug("probe step %d loss %.6f", step, result.loss)
    log.info("probe finished, loss %.4f -> %.4f", losses[0], losses[-1])
    return ProbeSummary(config.probe_steps, losses)


def run_finetune(
    model: ModelState,
    data: Dataset,
    config: TrainConfig,
    *,
    progress: bool = False,
) -> FinetuneResult:
    """Train a copy of ``model`` until ``epochs`` or ``total_steps`` runs out; returns it with the per-step losses."""
    work = model.clone()
    optimizer = SGD(learning_rate=config.learning_rate, momentum=config.momentum)
    losses: list[float] = []
    if config.epochs == 0 or config.total_steps == 0:
        return FinetuneResult(work, losses)

    batches = iter_batches(data, config.batch_size, config.seed)
    bar = tqdm(total=config.total_steps, desc=f"finetune ({config.mode})", disable=not progress)
    for step in range(1, config.total_steps + 1):
        epoch, x, y = next(batches)
        if epoch >= config.epochs:
            break
        result = train_step(work, (x, y), config, step=step, optimizer=optimizer)
        losses.append(result.loss)
        bar.update(1)
        log.debug("finetune step %d loss %.6f", step, result.loss)
    bar.close()
    log.info("finetune (%s): %d steps, final loss %.4f", config.mode, len(losses), losses[-1])
    return FinetuneResult(work, losses)
