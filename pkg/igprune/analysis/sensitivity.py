"""How early can the layer ranking be trusted?

One long adapter run streams its gradients into an IGIA accumulator.
At chosen step counts the accumulator is finalized (it stays usable) and the
resulting layer ranking is recorded. Every snapshot is compared with the
ranking at the final step by top-k set overlap.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from igprune.analysis.metrics import AnalysisError, RankingSnapshot, default_topk, topk_overlap
from igprune.importance.igia import IgiaAccumulator, IgiaMatrix
from igprune.importance.scoring import layer_scores, rank_layers
from igprune.model.transformer import GradRecord, ModelState
from igprune.train.datasets import Dataset
from igprune.train.trainer import TrainConfig, run_probe

__all__ = [
    "STEP_FRACTIONS",
    "ranking_from_igia",
    "sensitivity_curve",
    "SnapshotSink",
    "SensitivityResult",
    "capture_steps",
    "run_sensitivity",
]

log = logging.getLogger(__name__)

STEP_FRACTIONS = (0.0002, 0.0005, 0.0008, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0)


def ranking_from_igia(igia: Mapping[str, IgiaMatrix], layer_ids: Iterable[int], step: int) -> RankingSnapshot:
    return RankingSnapshot(step, tuple(rank_layers(layer_scores(igia, layer_ids))))


def sensitivity_curve(
    snapshots: Iterable[RankingSnapshot],
    reference: RankingSnapshot,
    k: int,
) -> list[tuple[int, float]]:
    snapshots = sorted(snapshots, key=lambda s: s.step)
    if not snapshots:
        raise AnalysisError("sensitivity curve needs at least one snapshot")
    return [(s.step, topk_overlap(s, reference, k)) for s in snapshots]


class SnapshotSink:
    """
    Gradient sink recording a ranking whenever the accumulator reaches one of ``steps``.

    Attributes
    ----------
        accumulator (IgiaAccumulator): Running IGIA state.
        steps (set[int]): Step counts to snapshot at.
        snapshots (list[RankingSnapshot]): Rankings recorded so far.
        igia_at (dict[int, dict[str, IgiaMatrix]]): Finalized IGIA per snapshot, when ``keep_igia``.
    """

    def __init__(self, model: ModelState, steps: Iterable[int], *, keep_igia: bool = False) -> None:
        self.accumulator = IgiaAccumulator.for_model(model)
        self.layer_ids = model.layer_ids
        self.steps = set(steps)
        self.keep_igia = keep_igia
        self.snapshots: list[RankingSnapshot] = []
        self.igia_at: dict[int, dict[str, IgiaMatrix]] = {}

    def __call__(self, record: GradRecord) -> None:
        self.accumulator.accumulate(record)
        step = self.accumulator.steps
        if step in self.steps:
            igia = self.accumulator.finalize()
            self.snapshots.append(ranking_from_igia(igia, self.layer_ids, step))
            if self.keep_igia:
                self.igia_at[step] = igia
            log.debug("snapshot at step %d: %s", step, self.snapshots[-1].ranking)


@dataclass
class SensitivityResult:
    k: int
    reference: RankingSnapshot
    snapshots: list[RankingSnapshot]
    fractions: dict[int, float] = field(default_factory=dict)
    igia_at: dict[int, dict[str, IgiaMatrix]] = field(default_factory=dict)

    def curve(self) -> list[tuple[int, float]]:
        return sensitivity_curve(self.snapshots, self.reference, self.k)

    def rows(self) -> list[dict]:
        return [
            {
                "step": step,
                "fraction": self.fractions.get(step, ""),
                "topk_overlap": overlap,
                "ranking": " ".join(map(str, snap.ranking)),
            }
            for (step, overlap), snap in zip(self.curve(), sorted(self.snapshots, key=lambda s: s.step))
        ]


def capture_steps(config: TrainConfig, fractions: Iterable[float]) -> dict[int, float]:
    """Step count per fraction of ``total_steps``; at least one step, first fraction wins on collisions."""
    steps: dict[int, float] = {}
    for f in fractions:
        steps.setdefault(max(1, config.probe_steps_from_fraction(f)), f)
    return steps


def run_sensitivity(
    model: ModelState,
    data: Dataset,
    config: TrainConfig,
    fractions: Iterable[float] = STEP_FRACTIONS,
    k: int | None = None,
    *,
    keep_igia: bool = False,
    progress: bool = False,
) -> SensitivityResult:
    """Adapter run over all ``total_steps`` with ranking snapshots at every fraction and the final step."""
    if config.total_steps < 1:
        raise AnalysisError("sensitivity needs total_steps ≥ 1")
    k = default_topk(len(model.layers)) if k is None else k
    fraction_of = capture_steps(config, fractions)
    fraction_of.setdefault(config.total_steps, 1.0)

    sink = SnapshotSink(model, fraction_of, keep_igia=keep_igia)
    long_run = dataclasses.replace(config, probe_steps=config.total_steps, mode="lora")
    run_probe(model, data, long_run, sink, progress=progress)

    by_step = {s.step: s for s in sink.snapshots}
    reference = by_step[config.total_steps]
    result = SensitivityResult(k, reference, sink.snapshots, fraction_of, sink.igia_at)
    for step, overlap in result.curve():
        log.info("step %d (%.4g of T): top-%d overlap %.3f", step, fraction_of[step], k, overlap)
    return result
