"""Carrying out a prune plan on a model."""

import logging
import math
from typing import Mapping

from igprune.importance.igia import IgiaMatrix
from igprune.importance.plan import PlanError, PrunePlan, pruned_ratio
from igprune.merge.layer_merge import MergeConfig, merge_layer
from igprune.model.surgery import block_parameter_counts, drop_layers
from igprune.model.transformer import ModelState

__all__ = ["apply_prune"]

log = logging.getLogger(__name__)

RATIO_TOLERANCE = 1e-9


def apply_prune(
    model: ModelState,
    plan: PrunePlan,
    igia: Mapping[str, IgiaMatrix],
    merge_cfg: MergeConfig | None = None,
) -> ModelState:
    """
    Merge the plan's merged layers into their targets, then drop every pruned
    layer. The plan's recorded ratio must match the block parameters it
    actually removes from ``model``.
    """
    if set(plan.layer_ids) != set(model.layer_ids):
        raise PlanError(f"plan covers layers {list(plan.layer_ids)}, model has {model.layer_ids}")
    ratio = pruned_ratio(block_parameter_counts(model), plan.pruned)
    if not math.isclose(ratio, plan.achieved_ratio, rel_tol=RATIO_TOLERANCE, abs_tol=RATIO_TOLERANCE):
        raise PlanError(f"plan records ratio {plan.achieved_ratio!r}, pruning this model removes {ratio!r}")

    work = model
    if plan.pruned_merge:
        work = merge_layer(model, plan, igia, merge_cfg or MergeConfig())
    result = drop_layers(work, plan.pruned)
    log.info("pruned %d of %d layers, block parameter ratio %.4f", len(plan.pruned), len(model.layers), ratio)
    return result
