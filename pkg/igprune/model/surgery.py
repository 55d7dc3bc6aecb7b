import logging
from typing import Iterable

import numpy as np

from igprune.model.lora import merge_lora
from igprune.model.transformer import ModelState

__all__ = [
    "SurgeryError",
    "drop_layers",
    "fold_adapters",
    "reset_adapters",
    "count_parameters",
    "block_parameter_counts",
]

log = logging.getLogger(__name__)


class SurgeryError(ValueError):
    pass


def drop_layers(model: ModelState, pruned: Iterable[int]) -> ModelState:
    """Return a copy of ``model`` without the blocks whose original index is in ``pruned``."""
    pruned = set(pruned)
    current = set(model.layer_ids)
    unknown = pruned - current
    if unknown:
        raise SurgeryError(f"unknown layer indices {sorted(unknown)}; model has {model.layer_ids}")
    if pruned and len(pruned) >= len(current):
        raise SurgeryError("cannot prune every layer")

    result = model.clone()
    result.layers = [b for b in result.layers if b.layer_id not in pruned]
    if pruned:
        log.info("dropped layers %s, remaining %s", sorted(pruned), result.layer_ids)
    return result


def fold_adapters(model: ModelState) -> ModelState:
    """Copy of ``model`` with every adapter merged into its base weight and W_B reset to zero."""
    result = model.clone()
    for lin in result.iter_linears():
        lin.W = merge_lora(lin)
        lin.B = np.zeros_like(lin.B)
    return result


def reset_adapters(model: ModelState, seed: int) -> ModelState:
    """Copy of ``model`` with every adapter folded into W, then fresh adapters (W_A random, W_B zero)."""
    result = fold_adapters(model)
    rng = np.random.default_rng(seed)
    for lin in result.iter_linears():
        lin.reset_adapter(rng)
    return result


def block_parameter_counts(model: ModelState) -> dict[int, int]:
    """Per-layer base-weight and norm-gain counts keyed by original layer index."""
    return {block.layer_id: block.param_count() for block in model.layers}


def count_parameters(model: ModelState, *, include_adapters: bool = False) -> int:
    total = model.embed.size + model.head.size + model.final_norm.size
    total += sum(block_parameter_counts(model).values())
    if include_adapters:
        total += sum(lin.A.size + lin.B.size for lin in model.iter_linears())
    return total
