import logging
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from dataclasses_json import dataclass_json

from igprune.importance.igia import IgiaMatrix
from igprune.importance.plan import PlanError, PrunePlan
from igprune.importance.scoring import MissingIgiaError
from igprune.merge.ops import (
    MergeConfigError,
    WEIGHT_SUM_TOLERANCE,
    adaptive_lambdas,
    default_tau,
    fisher_merge,
    sign_merge,
    sparsify,
    weighted_average_merge,
)
from igprune.model.config import SUBLAYERS
from igprune.model.surgery import fold_adapters
from igprune.model.transformer import ModelState, linear_name
from igprune.numerics import Tensor

__all__ = ["MergeStrategy", "MergeConfig", "merge_layer", "merge_linear"]

log = logging.getLogger(__name__)


class MergeStrategy(str, Enum):
    SIGN_SUM = "sign-sum"
    WEIGHTED_AVG = "weighted-avg"
    ADAPTIVE_ISOTROPIC = "adaptive-isotropic"
    ADAPTIVE_FISHER = "adaptive-fisher"


@dataclass_json
@dataclass(frozen=True)
class MergeConfig:
    """
    Attributes
    ----------
        sparsity_p (float): Fraction of donor entries kept by ``sparsify``.
        strategy (MergeStrategy): How donors are folded into their target.
        tau (float | None): Threshold of the adaptive strategies; derived from
            ``sparsity_p`` per donor when None.
        avg_weights (tuple[float, ...] | None): Weights of ``weighted-avg``, target
            first; uniform when None.
    """

    sparsity_p: float = 0.8
    strategy: MergeStrategy = MergeStrategy.SIGN_SUM
    tau: float | None = None
    avg_weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "strategy", MergeStrategy(self.strategy))
        except ValueError:
            raise MergeConfigError(
                f"unknown merge strategy {self.strategy!r}; expected one of {[s.value for s in MergeStrategy]}"
            ) from None
        if not 0.0 <= self.sparsity_p <= 1.0:
            raise MergeConfigError(f"sparsity_p must lie in [0, 1], got {self.sparsity_p}")
        if self.tau is not None and self.tau < 0:
            raise MergeConfigError(f"tau must be ≥ 0, got {self.tau}")
        if self.avg_weights is not None:
            weights = tuple(float(w) for w in self.avg_weights)
            if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
                raise MergeConfigError(f"avg_weights must be nonnegative and sum to 1, got {list(weights)}")
            object.__setattr__(self, "avg_weights", weights)


def _igia(igia: Mapping[str, IgiaMatrix], name: str) -> Tensor:
    if name not in igia:
        raise MissingIgiaError(name)
    return igia[name].F


def merge_linear(
    target_W: Tensor,
    donors: list[tuple[Tensor, Tensor]],
    cfg: MergeConfig,
    target_F: Tensor | None = None,
) -> Tensor:
    """
    Merge donor weights into one retained weight.

    ``donors`` holds (W, F) pairs in ascending layer order. The pairwise
    strategies fold them one at a time into the running result; the Fisher
    strategy weighs the running result with the target's own ``target_F``.
    """
    if cfg.strategy is MergeStrategy.SIGN_SUM:
        return sign_merge(target_W, [sparsify(W, F, cfg.sparsity_p) for W, F in donors])

    if cfg.strategy is MergeStrategy.WEIGHTED_AVG:
        tensors = [target_W] + [sparsify(W, F, cfg.sparsity_p) for W, F in donors]
        weights = cfg.avg_weights or tuple(1.0 / len(tensors) for _ in tensors)
        return weighted_average_merge(tensors, weights)

    if cfg.strategy is MergeStrategy.ADAPTIVE_FISHER and target_F is None:
        raise MergeConfigError("adaptive-fisher needs the target's IGIA matrix")
    running = target_W
    for W, F in donors:
        tau = cfg.tau if cfg.tau is not None else default_tau(F, cfg.sparsity_p)
        lam_r, lam_m = adaptive_lambdas(F, running, W, tau)
        if cfg.strategy is MergeStrategy.ADAPTIVE_ISOTROPIC:
            running = lam_r * running + lam_m * W
        else:
            assert target_F is not None
            running = fisher_merge(running, W, target_F, F, lam_r, lam_m)
    return running


def merge_layer(
    model: ModelState,
    plan: PrunePlan,
    igia: Mapping[str, IgiaMatrix],
    cfg: MergeConfig,
) -> ModelState:
    """
    Copy of ``model`` whose retained merge targets absorb their donors,
    sublayer by sublayer (q into q, up into up, ...). Adapters are folded
    first; the donors' norm gains are not merged. Donor blocks stay in the
    returned model; dropping them is left to the caller.
    """
    present = set(model.layer_ids)
    for donor, target in plan.merge_target.items():
        if donor not in present or target not in present:
            raise PlanError(f"merge {donor} into {target} refers to a layer missing from the model {model.layer_ids}")

    result = fold_adapters(model)
    for target, donors in plan.merge_groups().items():
        block = result.block(target)
        for sub in SUBLAYERS:
            pairs = [
                (result.block(d).linears[sub].W, _igia(igia, linear_name(d, sub)))
                for d in donors
            ]
            target_F = None
            if cfg.strategy is MergeStrategy.ADAPTIVE_FISHER:
                target_F = _igia(igia, linear_name(target, sub))
            block.linears[sub].W = merge_linear(block.linears[sub].W, pairs, cfg, target_F)
        log.info("merged layers %s into %d (%s, p=%.2f)", donors, target, cfg.strategy.value, cfg.sparsity_p)
    return result
