from dataclasses import dataclass

import numpy as np

from igprune.numerics import Tensor, DimensionError, matmul, zeros_like

__all__ = ["LinearWithLora", "merge_lora"]


@dataclass
class LinearWithLora:
    """
    A frozen-able base weight with a low-rank adapter beside it.

    Attributes
    ----------
        name (str): Qualified identifier ``layer.<j>.<sublayer>``.
        W (Tensor): Base weight, shape (out, in).
        A (Tensor): Adapter factor W_A, shape (rank, in).
        B (Tensor): Adapter factor W_B, shape (out, rank).
        alpha (float): Adapter scale.

    Methods
    -------
        effective_weight(): W + alpha * B @ A.
        reset_adapter(rng, init_std): fresh A drawn from ``rng``, B set to zero.
    """

    name: str
    W: Tensor
    A: Tensor
    B: Tensor
    alpha: float

    def __post_init__(self) -> None:
        out_dim, in_dim = self.W.shape
        if self.A.shape[1] != in_dim or self.B.shape[0] != out_dim or self.A.shape[0] != self.B.shape[1]:
            raise DimensionError(f"adapter shapes do not fit {self.name}", self.W.shape, self.B.shape, self.A.shape)

    @property
    def rank(self) -> int:
        return self.A.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    def effective_weight(self) -> Tensor:
        # Zeroed adapters must leave W bit-identical.
        if not self.B.any():
            return self.W
        return self.W + self.alpha * matmul(self.B, self.A)

    def reset_adapter(self, rng: np.random.Generator, init_std: float | None = None) -> None:
        in_dim = self.W.shape[1]
        std = init_std if init_std is not None else in_dim**-0.5
        self.A = rng.normal(0.0, std, size=self.A.shape)
        self.B = zeros_like(self.B)

    def copy(self) -> "LinearWithLora":
        return LinearWithLora(self.name, self.W.copy(), self.A.copy(), self.B.copy(), self.alpha)


def merge_lora(linear: LinearWithLora) -> Tensor:
    """Fold the adapter into its base weight and return W + alpha * W_B @ W_A."""
    return linear.effective_weight().copy()
