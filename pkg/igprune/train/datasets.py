"""Synthetic token tasks standing in for downstream fine-tuning corpora.

Every sample is an ``(x, y)`` pair of equal-length int64 arrays where ``y``
is ``x`` shifted left by one token. Positions whose next token cannot be
inferred from the prefix carry the ignore index in ``y``.

Built-in task kinds
-------------------
    copy: ``a_1 .. a_n SEP a_1 .. a_n``; only the copied half is scored.
    modadd: ``a PLUS b EQ c`` with c = (a + b) mod (vocab_size - 2); only c is scored.
    pattern: a random motif of length ``period`` repeated; the first period is unscored.
"""

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from igprune.params import Params

__all__ = ["TaskError", "TaskSpec", "Dataset", "TASK_KINDS", "make_dataset", "subsample", "iter_batches"]

TASK_KINDS = ("copy", "modadd", "pattern")


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    """
    Attributes
    ----------
        kind (str): One of ``copy``, ``modadd``, ``pattern``.
        vocab_size (int): Vocabulary of the model the data is meant for.
        seq_len (int): Length of every input sequence x (ignored by ``modadd``, which is always 4).
        period (int): Motif length of the ``pattern`` task.
        heldout_fraction (float): Share of samples reserved for evaluation.
    """

    kind: str = "copy"
    vocab_size: int = 32
    seq_len: int = 16
    period: int = 3
    heldout_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise TaskError(f"unknown task {self.kind!r}; expected one of {TASK_KINDS}")
        if self.vocab_size < 4:
            raise TaskError(f"vocab_size must be ≥ 4, got {self.vocab_size}")
        if self.kind == "copy" and (self.seq_len < 2 or self.seq_len % 2 == 1):
            raise TaskError(f"copy task needs an even seq_len ≥ 2, got {self.seq_len}")
        if self.kind == "pattern" and not 1 <= self.period < self.seq_len:
            raise TaskError(f"pattern period must lie in [1, seq_len), got {self.period}")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise TaskError("heldout_fraction must lie in (0, 1)")

    @property
    def input_len(self) -> int:
        return 4 if self.kind == "modadd" else self.seq_len


@dataclass
class Dataset:
    """
    Attributes
    ----------
        name (str): Task identifier.
        seed (int): Seed the corpus was generated from.
        samples (list[tuple[np.ndarray, np.ndarray]]): Training pairs (x, y).
        heldout (list[tuple[np.ndarray, np.ndarray]]): Evaluation pairs (x, y).
    """

    name: str
    seed: int
    samples: list[tuple[np.ndarray, np.ndarray]]
    heldout: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def arrays(self, split: str = "train") -> tuple[np.ndarray, np.ndarray]:
        pairs = self.samples if split == "train" else self.heldout
        if not pairs:
            raise TaskError(f"{split} split of {self.name} is empty")
        return np.stack([x for x, _ in pairs]), np.stack([y for _, y in pairs])


def _sequence(task: TaskSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    ignore = Params().ignore_index
    V = task.vocab_size
    if task.kind == "copy":
        half = task.seq_len // 2
        sep = V - 1
        content = rng.integers(0, V - 1, size=half)
        seq = np.concatenate([content, [sep], content])
        y = seq[1:].copy()
        y[: half - 1] = ignore
        return seq[:-1], y
    if task.kind == "modadd":
        modulus = V - 2
        a, b = rng.integers(0, modulus, size=2)
        seq = np.array([a, V - 2, b, V - 1, (a + b) % modulus])
        y = np.full(4, ignore)
        y[3] = seq[4]
        return seq[:-1], y
    motif = rng.integers(0, V, size=task.period)
    seq = np.resize(motif, task.seq_len + 1)
    y = seq[1:].copy()
    y[: task.period - 1] = ignore
    return seq[:-1], y


def make_dataset(task: TaskSpec, size: int, seed: int) -> Dataset:
    """Deterministic synthetic corpus of ``size`` samples with a held-out split carved off the end."""
    if size < 2:
        raise TaskError(f"size must be ≥ 2, got {size}")
    rng = np.random.default_rng(seed)
    pairs = [_sequence(task, rng) for _ in range(size)]
    pairs = [(x.astype(np.int64), y.astype(np.int64)) for x, y in pairs]
    n_heldout = min(size - 1, max(1, round(size * task.heldout_fraction)))
    return Dataset(task.kind, seed, pairs[: size - n_heldout], pairs[size - n_heldout :])


def subsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Random ``fraction`` of the training split; the held-out split is shared unchanged."""
    if not 0.0 < fraction <= 1.0:
        raise TaskError(f"fraction must lie in (0, 1], got {fraction}")
    n = max(1, math.ceil(fraction * len(dataset.samples)))
    idx = np.sort(np.random.default_rng(seed).permutation(len(dataset.samples))[:n])
    return Dataset(dataset.name, dataset.seed, [dataset.samples[i] for i in idx], dataset.heldout)


def iter_batches(dataset: Dataset, batch_size: int, seed: int) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Endless ``(epoch, x, y)`` batches; every epoch is a fresh seeded shuffle, the last batch may be short."""
    xs, ys = dataset.arrays("train")
    epoch = 0
    while True:
        order = np.random.default_rng([seed, epoch]).permutation(len(xs))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            yield epoch, xs[idx], ys[idx]
        epoch += 1
