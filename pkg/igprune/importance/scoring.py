import logging
from dataclasses import dataclass
from typing import Iterable, Mapping

from igprune.importance.igia import IgiaMatrix
from igprune.model.config import SUBLAYERS
from igprune.model.transformer import linear_name
from igprune.numerics import total_sum

__all__ = ["MissingIgiaError", "LayerScores", "layer_score", "layer_scores", "rank_layers"]

log = logging.getLogger(__name__)


class MissingIgiaError(ValueError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"no IGIA matrix for linear {name}")


@dataclass(frozen=True)
class LayerScores:
    """
    Importance score of every transformer layer.

    Attributes
    ----------
        entries (tuple[tuple[int, float], ...]): (layer index, score) pairs in layer order.

    Methods
    -------
        layer_ids: indices covered.
        score(j): score of layer ``j``.
        as_dict(): index -> score.
    """

    entries: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        ids = [j for j, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate layer indices in {ids}")
        if any(s < 0 for _, s in self.entries):
            raise ValueError("layer scores must be nonnegative")

    @classmethod
    def from_values(cls, values: Iterable[float], layer_ids: Iterable[int] | None = None) -> "LayerScores":
        values = [float(v) for v in values]
        ids = list(range(len(values))) if layer_ids is None else list(layer_ids)
        return cls(tuple(zip(ids, values)))

    @property
    def layer_ids(self) -> list[int]:
        return [j for j, _ in self.entries]

    def score(self, layer_id: int) -> float:
        return self.as_dict()[layer_id]

    def as_dict(self) -> dict[int, float]:
        return dict(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def layer_score(igia: Mapping[str, IgiaMatrix], layer_id: int) -> float:
    """Sum of every entry of the seven IGIA matrices of layer ``layer_id``."""
    total = 0.0
    for sub in SUBLAYERS:
        name = linear_name(layer_id, sub)
        if name not in igia:
            raise MissingIgiaError(name)
        total += total_sum(igia[name].F)
    return total


def layer_scores(igia: Mapping[str, IgiaMatrix], layer_ids: Iterable[int]) -> LayerScores:
    scores = LayerScores(tuple((j, layer_score(igia, j)) for j in layer_ids))
    log.info("layer scores: %s", ", ".join(f"{j}={s:.6g}" for j, s in scores.entries))
    return scores


def rank_layers(scores: LayerScores) -> list[int]:
    """Layer indices, most important first; equal scores keep the lower index first."""
    return [j for j, _ in sorted(scores.entries, key=lambda e: (-e[1], e[0]))]
