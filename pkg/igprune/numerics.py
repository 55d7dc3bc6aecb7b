"""Dense 64-bit tensor kernel.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every reduction
goes through ``numpy.einsum`` without path optimisation, which runs the
contraction in numpy's own single-threaded loops instead of a BLAS backend,
so results do not depend on thread count.
"""

from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt

from igprune.params import Params

__all__ = [
    "Tensor",
    "DimensionError",
    "NonFiniteError",
    "as_tensor",
    "check_finite",
    "matmul",
    "batched_matmul",
    "transpose",
    "hadamard_square",
    "scaled_add",
    "total_sum",
    "zeros_like",
    "sign_mask",
]

Tensor = npt.NDArray[np.float64]


class DimensionError(ValueError):
    def __init__(self, message: str, *shapes: Sequence[int]) -> None:
        self.shapes = tuple(tuple(s) for s in shapes)
        detail = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{message}: {detail}" if detail else message)


class NonFiniteError(ValueError):
    pass


def as_tensor(data: npt.ArrayLike, shape: Iterable[int] | None = None) -> Tensor:
    """Copy ``data`` into a finite float64 array, optionally reshaped to ``shape``."""
    arr = np.array(data, dtype=Params().dtype)
    if shape is not None:
        shape = tuple(shape)
        if any(d < 1 for d in shape):
            raise DimensionError("dimensions must be positive", shape)
        if int(np.prod(shape)) != arr.size:
            raise DimensionError("element count does not match shape", arr.shape, shape)
        arr = arr.reshape(shape)
    check_finite(arr)
    return arr


def check_finite(a: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return a


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner dimensions disagree", a.shape, b.shape)
    return np.einsum("ik,kj->ij", a, b, optimize=False)


def batched_matmul(a: Tensor, b: Tensor) -> Tensor:
    """``matmul`` over matching leading dimensions: [..., m, k] @ [..., k, n]."""
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError("batched matmul shapes disagree", a.shape, b.shape)
    return np.einsum("...ik,...kj->...ij", a, b, optimize=False)


def transpose(a: Tensor) -> Tensor:
    return np.ascontiguousarray(np.swapaxes(a, -1, -2))


def hadamard_square(a: Tensor) -> Tensor:
    return np.multiply(a, a)


def scaled_add(a: Tensor, b: Tensor, s: float) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError("scaled_add shapes disagree", a.shape, b.shape)
    return a + s * b


def total_sum(a: Tensor) -> float:
    return float(np.einsum("i->", np.ravel(a), optimize=False))


def zeros_like(a: Tensor) -> Tensor:
    return np.zeros(a.shape, dtype=Params().dtype)


def sign_mask(a: Tensor) -> Tensor:
    """SignMask of ``a``: entries in {-1, 0, +1}, with sign(0) == 0."""
    return np.sign(a)
