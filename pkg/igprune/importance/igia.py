"""Initial Gradient Information Accumulation (IGIA) matrices.

For a linear layer W with adapter factors W_A (r x in) and W_B (out x r) the
simulated gradient of one step is ``grad_B @ grad_A`` (out x in), the only
product of the two adapter gradients shaped like W. The IGIA matrix is the
mean over the first t probe steps of its elementwise square.

W_B starts at zero, so the W_A gradient of step 1 vanishes and so does the
simulated gradient of that step.
"""

import logging
from dataclasses import dataclass

import numpy as np

from igprune.model.transformer import GradRecord, ModelState
from igprune.numerics import Tensor, DimensionError, hadamard_square, matmul, scaled_add
from igprune.train.datasets import Dataset
from igprune.train.trainer import TrainConfig, run_probe

__all__ = [
    "StepOrderError",
    "IgiaShapeError",
    "EmptyAccumulatorError",
    "IgiaMatrix",
    "IgiaAccumulator",
    "simulate_weight_gradient",
    "compute_igia",
]

log = logging.getLogger(__name__)


class StepOrderError(ValueError):
    pass


class IgiaShapeError(ValueError):
    pass


class EmptyAccumulatorError(ValueError):
    pass


@dataclass(frozen=True)
class IgiaMatrix:
    """
    Attributes
    ----------
        name (str): Linear the matrix belongs to.
        F (Tensor): Nonnegative importance per weight entry, shaped like W.
        steps_seen (int): Number of probe steps averaged.
    """

    name: str
    F: Tensor
    steps_seen: int

    def __post_init__(self) -> None:
        if self.steps_seen < 1:
            raise EmptyAccumulatorError(f"{self.name}: steps_seen must be ≥ 1")
        if np.any(self.F < 0):
            raise ValueError(f"{self.name}: IGIA entries must be nonnegative")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.F.shape

    def scaled(self, factor: float) -> "IgiaMatrix":
        return IgiaMatrix(self.name, self.F * factor, self.steps_seen)


def simulate_weight_gradient(grad_b: Tensor, grad_a: Tensor) -> Tensor:
    if grad_b.shape[1] != grad_a.shape[0]:
        raise DimensionError("adapter ranks disagree", grad_b.shape, grad_a.shape)
    return matmul(grad_b, grad_a)


class IgiaAccumulator:
    """
    Streaming sum of squared simulated gradients, one running sum per linear.

    Attributes
    ----------
        shapes (dict[str, tuple[int, int]]): Registered linears and their W shapes.
        steps (int): Number of records consumed.

    Methods
    -------
        accumulate(record, check_order=True): add one step's squared simulated gradients.
        finalize(): running sums divided by ``steps``; the accumulator stays usable.
        __call__(record): ``accumulate`` as a gradient sink.
    """

    def __init__(self, shapes: dict[str, tuple[int, int]]) -> None:
        if not shapes:
            raise ValueError("accumulator needs at least one linear")
        self.shapes = dict(shapes)
        self.steps = 0
        self._sums = {name: np.zeros(shape) for name, shape in self.shapes.items()}

    @classmethod
    def for_model(cls, model: ModelState) -> "IgiaAccumulator":
        return cls({lin.name: lin.shape for lin in model.iter_linears()})

    def accumulate(self, record: GradRecord, *, check_order: bool = True) -> "IgiaAccumulator":
        if check_order and record.step != self.steps + 1:
            raise StepOrderError(f"expected step {self.steps + 1}, got {record.step}")
        if set(record.grads) != set(self.shapes):
            missing = sorted(set(self.shapes) - set(record.grads))
            extra = sorted(set(record.grads) - set(self.shapes))
            raise IgiaShapeError(f"record linears differ from registered ones (missing {missing}, extra {extra})")

        updates = {}
        for name, shape in self.shapes.items():
            grad_a, grad_b = record.grads[name]
            sim = simulate_weight_gradient(grad_b, grad_a)
            if sim.shape != shape:
                raise IgiaShapeError(f"{name}: simulated gradient {sim.shape} does not match W {shape}")
            updates[name] = hadamard_square(sim)
        # commit only once every linear validated
        for name, sq in updates.items():
            self._sums[name] = scaled_add(self._sums[name], sq, 1.0)
        self.steps += 1
        return self

    __call__ = accumulate

    def running_sum(self, name: str) -> Tensor:
        return self._sums[name].copy()

    def finalize(self) -> dict[str, IgiaMatrix]:
        if self.steps == 0:
            raise EmptyAccumulatorError("no gradient records were accumulated")
        return {name: IgiaMatrix(name, s / self.steps, self.steps) for name, s in self._sums.items()}


def compute_igia(
    model: ModelState,
    data: Dataset,
    config: TrainConfig,
    *,
    progress: bool = False,
) -> dict[str, IgiaMatrix]:
    """Run the adapter probe and turn its gradient stream into one IGIA matrix per linear."""
    if config.probe_steps < 1:
        raise ValueError("compute_igia needs at least one probe step")
    acc = IgiaAccumulator.for_model(model)
    run_probe(model, data, config, acc, progress=progress)
    igia = acc.finalize()
    log.info("IGIA built for %d linears over %d steps", len(igia), acc.steps)
    return igia
