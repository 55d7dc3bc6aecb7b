"""Run configuration and flat ``key=value`` config files.

Keys are the field names of ``ModelConfig``, ``TrainConfig``, ``MergeConfig``
and the scalar fields of ``RunConfig``; ``#`` starts a comment. Values are
converted with the type annotation of the field they set.
"""

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from dataclasses_json import dataclass_json

from igprune.merge.layer_merge import MergeConfig
from igprune.model.config import ConfigError, ModelConfig
from igprune.train.datasets import TaskSpec
from igprune.train.trainer import TrainConfig

__all__ = ["ConfigFileError", "RunConfig", "parse_config_text", "load_config_file", "coerce_value"]


class ConfigFileError(ValueError):
    pass


@dataclass_json
@dataclass(frozen=True)
class RunConfig:
    """
    Everything one pipeline run needs.

    Attributes
    ----------
        model (ModelConfig): Model shape.
        train (TrainConfig): Probe and fine-tune settings.
        merge (MergeConfig): Merge strategy and sparsity.
        n_prune (int): N, layers to prune.
        n_merge (int): Pruned layers merged rather than discarded.
        task (str): Synthetic task kind.
        dataset_size (int): Samples generated, held-out split included.
        data_seed (int): Seed of the synthetic corpus.
        seq_len (int): Input length of the synthetic task.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    n_prune: int = 1
    n_merge: int = 0
    task: str = "copy"
    dataset_size: int = 512
    data_seed: int = 0
    seq_len: int = 16

    def __post_init__(self) -> None:
        if not 0 <= self.n_merge <= self.n_prune:
            raise ConfigError(f"need 0 ≤ n_merge ≤ n_prune, got {self.n_merge} and {self.n_prune}")
        if self.n_prune >= self.model.n_layers:
            raise ConfigError(f"n_prune ({self.n_prune}) must be below n_layers ({self.model.n_layers})")
        spec = self.task_spec()
        if spec.input_len > self.model.max_seq:
            raise ConfigError(f"task sequences of length {spec.input_len} exceed max_seq {self.model.max_seq}")

    def task_spec(self, vocab_size: int | None = None) -> TaskSpec:
        return TaskSpec(self.task, vocab_size or self.model.vocab_size, self.seq_len)

    @classmethod
    def full_scale_profile(cls) -> "RunConfig":
        """32 layers, lr 1e-5, batch 64, 3 epochs, probe on 1% of T, N=13 with 3 merged, p=0.8."""
        return cls(
            model=ModelConfig(n_layers=32),
            train=TrainConfig.full_scale_profile(),
            merge=MergeConfig(sparsity_p=0.8),
            n_prune=13,
            n_merge=3,
        )

    def with_values(self, **values: Any) -> "RunConfig":
        """Copy with fields of any sub-config replaced by name; values are already typed."""
        sections: dict[str, dict[str, Any]] = {"model": {}, "train": {}, "merge": {}, "": {}}
        for key, value in values.items():
            sections[_section_of(key)][key] = value
        return dataclasses.replace(
            self,
            model=dataclasses.replace(self.model, **sections["model"]),
            train=dataclasses.replace(self.train, **sections["train"]),
            merge=dataclasses.replace(self.merge, **sections["merge"]),
            **sections[""],
        )


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "merge": MergeConfig}


def _fields(cls: type) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _section_of(key: str) -> str:
    for section, cls in _SECTIONS.items():
        if key in _fields(cls):
            return section
    if key in _fields(RunConfig) - set(_SECTIONS):
        return ""
    raise ConfigFileError(f"unknown config key {key!r}")


def _hint(key: str) -> Any:
    section = _section_of(key)
    cls = _SECTIONS[section] if section else RunConfig
    return typing.get_type_hints(cls)[key]


def coerce_value(hint: Any, raw: str) -> Any:
    """Convert ``raw`` to the annotated type; ``none`` or empty sets an optional field to None."""
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw.strip().lower() in ("", "none"):
            return None
        return coerce_value(args[0], raw)
    if origin is tuple:
        inner = typing.get_args(hint)[0]
        return tuple(coerce_value(inner, part) for part in raw.split(","))
    if isinstance(hint, type) and issubclass(hint, Enum):
        return hint(raw.strip())
    if hint is bool:
        return raw.strip().lower() in ("1", "true", "yes")
    return hint(raw.strip())


def parse_config_text(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigFileError(f"{source}:{lineno}: expected key=value, got {line!r}")
        if key in values:
            raise ConfigFileError(f"{source}:{lineno}: key {key!r} set twice")
        try:
            values[key] = coerce_value(_hint(key), raw)
        except ConfigFileError as e:
            raise ConfigFileError(f"{source}:{lineno}: {e}") from None
        except (TypeError, ValueError):
            raise ConfigFileError(f"{source}:{lineno}: cannot parse {raw.strip()!r} for {key}") from None
    try:
        return (base or RunConfig()).with_values(**values)
    except ValueError as e:
        raise ConfigFileError(f"{source}: {e}") from None


def load_config_file(path: str | os.PathLike, base: RunConfig | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read(), base, str(path))
