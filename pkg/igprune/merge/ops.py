"""Tensor-level merge operations.

Donor layers are sparsified by IGIA magnitude and folded into a retained
layer. ``sign_merge`` adds every donor entry whose sign agrees with the
retained entry; the remaining operations are the averaging and adaptive
(optionally Fisher-weighted) alternatives.
"""

import math
from typing import Sequence

import numpy as np

from igprune.importance.igia import IgiaMatrix
from igprune.numerics import Tensor, DimensionError, hadamard_square, scaled_add, sign_mask
from igprune.params import Params

__all__ = [
    "MergeConfigError",
    "kept_count",
    "sparsify",
    "sign_merge",
    "weighted_average_merge",
    "adaptive_lambda",
    "adaptive_lambdas",
    "default_tau",
    "fisher_merge",
]

WEIGHT_SUM_TOLERANCE = 1e-9


class MergeConfigError(ValueError):
    pass


def _check_fraction(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise MergeConfigError(f"sparsity fraction must lie in [0, 1], got {p}")


def _importance(F: IgiaMatrix | Tensor) -> Tensor:
    return F.F if isinstance(F, IgiaMatrix) else np.asarray(F)


def kept_count(n: int, p: float) -> int:
    """Entries surviving sparsification at fraction ``p``: ceil(p * n), capped at n."""
    _check_fraction(p)
    return min(n, math.ceil(p * n - 1e-9))


def sparsify(W: Tensor, F: IgiaMatrix | Tensor, p: float) -> Tensor:
    """
    Keep the ``kept_count(W.size, p)`` entries of ``W`` with the largest
    importance in ``F`` and zero the rest. Equal importances keep the lower
    flat index first.
    """
    importance = _importance(F)
    if importance.shape != W.shape:
        raise DimensionError("weight and importance shapes disagree", W.shape, importance.shape)
    k = kept_count(W.size, p)
    flat = importance.ravel()
    order = np.lexsort((np.arange(flat.size), -flat))
    keep = order[:k]
    result = np.zeros_like(W)
    result.flat[keep] = W.flat[keep]
    return result


def sign_merge(W1: Tensor, sparsified: Sequence[Tensor]) -> Tensor:
    """W1 plus every donor entry whose sign equals the nonzero sign of the matching W1 entry."""
    result = W1.copy()
    reference = sign_mask(W1)
    for donor in sparsified:
        if donor.shape != W1.shape:
            raise DimensionError("donor shape disagrees with retained weight", W1.shape, donor.shape)
        agree = (sign_mask(donor) == reference) & (reference != 0)
        result = scaled_add(result, np.where(agree, donor, 0.0), 1.0)
    return result


def weighted_average_merge(tensors: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    if not tensors or len(tensors) != len(weights):
        raise MergeConfigError(f"need one weight per tensor, got {len(weights)} weights for {len(tensors)} tensors")
    if any(w < 0 for w in weights) or abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise MergeConfigError(f"weights must be nonnegative and sum to 1, got {list(weights)}")
    result = weights[0] * tensors[0]
    for w, t in zip(weights[1:], tensors[1:]):
        if t.shape != tensors[0].shape:
            raise DimensionError("merged tensors disagree in shape", tensors[0].shape, t.shape)
        result = scaled_add(result, t, w)
    return result


def adaptive_lambda(F_m_entry: float, sign_r: int, sign_m: int, tau: float) -> tuple[float, float]:
    """(0.5, 0.5) when F_m_entry² reaches ``tau`` and both signs agree and are nonzero, else (1, 0)."""
    if tau < 0:
        raise MergeConfigError(f"tau must be ≥ 0, got {tau}")
    if F_m_entry * F_m_entry >= tau and sign_m == sign_r != 0:
        return 0.5, 0.5
    return 1.0, 0.0


def adaptive_lambdas(F_m: Tensor, theta_r: Tensor, theta_m: Tensor, tau: float) -> tuple[Tensor, Tensor]:
    """``adaptive_lambda`` over whole tensors; signs are taken from ``theta_r`` and ``theta_m``."""
    if tau < 0:
        raise MergeConfigError(f"tau must be ≥ 0, got {tau}")
    if not F_m.shape == theta_r.shape == theta_m.shape:
        raise DimensionError("adaptive weights need equal shapes", F_m.shape, theta_r.shape, theta_m.shape)
    sign_r, sign_m = sign_mask(theta_r), sign_mask(theta_m)
    merge = (hadamard_square(F_m) >= tau) & (sign_m == sign_r) & (sign_r != 0)
    return np.where(merge, 0.5, 1.0), np.where(merge, 0.5, 0.0)


def default_tau(F_m: IgiaMatrix | Tensor, p: float) -> float:
    """
    Threshold on squared importance admitting the same ``kept_count`` entries
    that ``sparsify`` keeps at fraction ``p``: the k-th largest F_m². No entry
    passes at p = 0.
    """
    sq = np.sort(hadamard_square(_importance(F_m)).ravel())[::-1]
    k = kept_count(sq.size, p)
    if k == 0:
        return math.inf
    return float(sq[k - 1])


def fisher_merge(
    theta_r: Tensor,
    theta_m: Tensor,
    F_r: Tensor,
    F_m: Tensor,
    lam_r: Tensor | float,
    lam_m: Tensor | float,
) -> Tensor:
    """
    Entrywise (λ_r F_r θ_r + λ_m F_m θ_m) / (λ_r F_r + λ_m F_m).

    Entries with λ_m == 0, or whose denominator falls below the Fisher guard,
    take θ_r unchanged.
    """
    if not theta_r.shape == theta_m.shape == F_r.shape == F_m.shape:
        raise DimensionError("Fisher merge needs equal shapes", theta_r.shape, theta_m.shape, F_r.shape, F_m.shape)
    lam_r = np.broadcast_to(np.asarray(lam_r, dtype=Params().dtype), theta_r.shape)
    lam_m = np.broadcast_to(np.asarray(lam_m, dtype=Params().dtype), theta_r.shape)
    weight_r = lam_r * F_r
    weight_m = lam_m * F_m
    numerator = weight_r * theta_r + weight_m * theta_m
    denominator = weight_r + weight_m
    usable = (denominator >= Params().fisher_guard) & (lam_m != 0)
    result = theta_r.copy()
    np.divide(numerator, denominator, out=result, where=usable)
    return result
