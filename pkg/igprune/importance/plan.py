"""Prune plans: which layers stay, which are dropped, which are merged where."""

import bisect
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from igprune.importance.scoring import LayerScores, rank_layers

__all__ = ["PlanError", "PrunePlan", "pruned_ratio", "make_prune_plan", "format_plan_report"]

log = logging.getLogger(__name__)


class PlanError(ValueError):
    pass


def pruned_ratio(layer_sizes: Mapping[int, int], pruned: Iterable[int]) -> float:
    """Share of block parameters held by the ``pruned`` layers."""
    total = sum(layer_sizes.values())
    if total == 0:
        return 0.0
    return sum(layer_sizes[j] for j in set(pruned)) / total


@dataclass(frozen=True)
class PrunePlan:
    """
    Outcome of layer selection.

    Attributes
    ----------
        retained (tuple[int, ...]): Layers kept, ascending.
        pruned_discard (tuple[int, ...]): Layers dropped outright, ascending.
        pruned_merge (tuple[int, ...]): Layers merged before being dropped, ascending.
        merge_target (dict[int, int]): Merged layer -> nearest preceding retained layer.
        achieved_ratio (float): Share of block parameters removed.
        scores (LayerScores | None): Scores the plan was made from, if any.

    Methods
    -------
        pruned: every dropped layer.
        merge_groups(): retained target -> donors in ascending order.
    """

    retained: tuple[int, ...]
    pruned_discard: tuple[int, ...] = ()
    pruned_merge: tuple[int, ...] = ()
    merge_target: dict[int, int] = field(default_factory=dict)
    achieved_ratio: float = 0.0
    scores: LayerScores | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        groups = [self.retained, self.pruned_discard, self.pruned_merge]
        everything = [j for g in groups for j in g]
        if len(set(everything)) != len(everything):
            raise PlanError("retained, discarded and merged layers must be disjoint")
        if not self.retained:
            raise PlanError("a plan must retain at least one layer")
        if set(self.merge_target) != set(self.pruned_merge):
            raise PlanError("every merged layer needs exactly one merge target")
        retained = sorted(self.retained)
        for donor, target in self.merge_target.items():
            pos = bisect.bisect_left(retained, donor)
            if pos == 0 or retained[pos - 1] != target:
                raise PlanError(f"layer {donor} must merge into the nearest preceding retained layer, not {target}")
        if not 0.0 <= self.achieved_ratio <= 1.0:
            raise PlanError(f"achieved_ratio must lie in [0, 1], got {self.achieved_ratio}")

    @property
    def pruned(self) -> tuple[int, ...]:
        return tuple(sorted(self.pruned_discard + self.pruned_merge))

    @property
    def layer_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.retained + self.pruned))

    def merge_groups(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for donor in sorted(self.merge_target):
            groups.setdefault(self.merge_target[donor], []).append(donor)
        return groups


def make_prune_plan(
    scores: LayerScores,
    prune_count: int,
    merge_count: int = 0,
    protect: Iterable[int] | None = None,
    layer_sizes: Mapping[int, int] | None = None,
) -> PrunePlan:
    """
    Prune the ``prune_count`` lowest-scoring unprotected layers; the
    ``merge_count`` highest-scoring of them are merged into their nearest
    preceding retained layer instead of being discarded.

    ``protect`` defaults to the lowest layer index, so every merged layer has
    a layer before it. ``layer_sizes`` maps layer index to block parameter
    count; all layers count equally when omitted.
    """
    ids = sorted(scores.layer_ids)
    if not 0 <= merge_count <= prune_count:
        raise PlanError(f"need 0 ≤ merge_count ≤ prune_count, got {merge_count} and {prune_count}")
    if prune_count >= len(ids):
        raise PlanError(f"cannot prune {prune_count} of {len(ids)} layers")
    protected = {ids[0]} if protect is None else set(protect)
    if not protected <= set(ids):
        raise PlanError(f"protected layers {sorted(protected - set(ids))} are not part of the model")

    by_score = scores.as_dict()
    candidates = sorted((j for j in ids if j not in protected), key=lambda j: (by_score[j], j))
    if len(candidates) < prune_count:
        raise PlanError(f"only {len(candidates)} unprotected layers, cannot prune {prune_count}")
    pruned = candidates[:prune_count]
    merged = sorted(sorted(pruned, key=lambda j: (-by_score[j], j))[:merge_count])
    discarded = sorted(set(pruned) - set(merged))
    retained = [j for j in ids if j not in pruned]

    targets = {}
    for donor in merged:
        preceding = [j for j in retained if j < donor]
        if not preceding:
            raise PlanError(f"layer {donor} has no preceding retained layer to merge into")
        targets[donor] = preceding[-1]

    sizes = layer_sizes if layer_sizes is not None else {j: 1 for j in ids}
    plan = PrunePlan(
        tuple(retained),
        tuple(discarded),
        tuple(merged),
        targets,
        pruned_ratio(sizes, pruned),
        scores,
    )
    log.info(
        "plan: retain %s, discard %s, merge %s, ratio %.4f",
        list(plan.retained),
        list(plan.pruned_discard),
        plan.merge_target,
        plan.achieved_ratio,
    )
    return plan


def format_plan_report(plan: PrunePlan) -> str:
    """Human-readable summary: scores and ranking when known, then the layer lists and the ratio."""
    lines = []
    if plan.scores is not None:
        lines.append("layer  score")
        for j, s in plan.scores.entries:
            lines.append(f"{j:>5}  {s:.9g}")
        lines.append("ranking: " + " ".join(map(str, rank_layers(plan.scores))))
    lines.append("retained: " + " ".join(map(str, plan.retained)))
    lines.append("discarded: " + " ".join(map(str, plan.pruned_discard)))
    lines.append("merged: " + " ".join(f"{d}->{t}" for d, t in sorted(plan.merge_target.items())))
    lines.append(f"achieved ratio: {plan.achieved_ratio:.6f}")
    return "\n".join(lines) + "\n"
