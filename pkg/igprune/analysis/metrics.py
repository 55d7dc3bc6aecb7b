import csv
import logging
import math
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence, TextIO

import numpy as np
from dataclasses_json import dataclass_json

from igprune.importance.plan import pruned_ratio
from igprune.model.surgery import block_parameter_counts, count_parameters
from igprune.model.transformer import ModelState, cross_entropy, forward
from igprune.params import Params
from igprune.train.datasets import Dataset

__all__ = [
    "AnalysisError",
    "RankingSnapshot",
    "EvalReport",
    "ParamReport",
    "topk_overlap",
    "default_topk",
    "rank_correlation",
    "score_logits",
    "evaluate",
    "param_report",
    "write_csv",
]

log = logging.getLogger(__name__)


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class RankingSnapshot:
    """Layer ranking, most important first, as seen after ``step`` probe steps."""

    step: int
    ranking: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranking", tuple(int(j) for j in self.ranking))
        if len(set(self.ranking)) != len(self.ranking):
            raise AnalysisError(f"ranking {list(self.ranking)} repeats a layer")

    def top(self, k: int) -> set[int]:
        return set(self.ranking[:k])


@dataclass_json
@dataclass(frozen=True)
class EvalReport:
    """
    Attributes
    ----------
        loss (float): Mean token cross-entropy over scored targets.
        perplexity (float): exp(loss).
        accuracy (float): Share of scored targets predicted by the argmax logit.
        samples (int): Sequences evaluated.
        tokens (int): Scored targets.
    """

    loss: float
    perplexity: float
    accuracy: float
    samples: int
    tokens: int


@dataclass_json
@dataclass(frozen=True)
class ParamReport:
    total_before: int
    total_after: int
    block_before: int
    block_after: int
    ratio: float
    per_layer: dict[int, int]
    removed: tuple[int, ...]

    def format(self) -> str:
        lines = ["layer  params  status"]
        for j, n in sorted(self.per_layer.items()):
            lines.append(f"{j:>5}  {n:>6}  {'removed' if j in self.removed else 'kept'}")
        lines.append(f"total parameters: {self.total_before} -> {self.total_after}")
        lines.append(f"block parameters: {self.block_before} -> {self.block_after}")
        lines.append(f"block ratio removed: {self.ratio:.6f}")
        return "\n".join(lines) + "\n"


def default_topk(n_layers: int) -> int:
    """ceil(0.6 * n_layers): 20 of 32 at full scale."""
    return max(1, math.ceil(0.6 * n_layers - 1e-9))


def topk_overlap(candidate: RankingSnapshot, reference: RankingSnapshot, k: int) -> float:
    """Share of the reference's top ``k`` layers that are also in the candidate's top ``k``."""
    n = min(len(candidate.ranking), len(reference.ranking))
    if not 1 <= k <= n:
        raise AnalysisError(f"k must lie in [1, {n}], got {k}")
    return len(candidate.top(k) & reference.top(k)) / k


def rank_correlation(a: RankingSnapshot, b: RankingSnapshot) -> float:
    """Spearman correlation of two rankings over the same layers."""
    if set(a.ranking) != set(b.ranking):
        raise AnalysisError(f"rankings cover different layers: {sorted(a.ranking)} vs {sorted(b.ranking)}")
    n = len(a.ranking)
    if n == 1:
        return 1.0
    pos_b = {j: i for i, j in enumerate(b.ranking)}
    d2 = sum((i - pos_b[j]) ** 2 for i, j in enumerate(a.ranking))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def score_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, float, int]:
    """(mean loss, argmax accuracy, scored count) over targets other than the ignore index."""
    loss, _ = cross_entropy(logits, targets)
    mask = targets != Params().ignore_index
    hits = (np.argmax(logits, axis=-1) == targets) & mask
    count = int(np.count_nonzero(mask))
    return loss, int(np.count_nonzero(hits)) / count, count


def evaluate(model: ModelState, heldout: Dataset) -> EvalReport:
    """Loss, perplexity and accuracy over the whole held-out split."""
    if not heldout.heldout:
        raise AnalysisError(f"held-out split of {heldout.name} is empty")
    xs, ys = heldout.arrays("heldout")
    logits, _ = forward(model, xs)
    loss, accuracy, tokens = score_logits(logits, ys)
    report = EvalReport(loss, math.exp(loss), accuracy, len(xs), tokens)
    log.info("eval on %d samples: loss %.6f, accuracy %.4f", report.samples, report.loss, report.accuracy)
    return report


def param_report(before: ModelState, after: ModelState) -> ParamReport:
    """Parameter counts of ``before`` and ``after``; the ratio is over block parameters only."""
    per_layer = block_parameter_counts(before)
    removed = tuple(sorted(set(before.layer_ids) - set(after.layer_ids)))
    return ParamReport(
        total_before=count_parameters(before),
        total_after=count_parameters(after),
        block_before=sum(per_layer.values()),
        block_after=sum(block_parameter_counts(after).values()),
        ratio=pruned_ratio(per_layer, removed),
        per_layer=per_layer,
        removed=removed,
    )


def write_csv(rows: Iterable[Mapping[str, Any]], columns: Sequence[str], stream: TextIO) -> None:
    """Header row followed by one line per row, ``\\n`` line endings."""
    writer = csv.DictWriter(stream, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(dict(row))
