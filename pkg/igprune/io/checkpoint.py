import logging
import os
from typing import Mapping

import numpy as np

from igprune.importance.igia import IgiaMatrix
from igprune.io.container import ContainerError, load_container, save_container
from igprune.model.config import SUBLAYERS, ModelConfig
from igprune.model.lora import LinearWithLora
from igprune.model.transformer import LayerBlock, ModelState, linear_name
from igprune.params import Params

__all__ = ["save_model", "load_model", "save_igia", "load_igia", "model_tensors"]

log = logging.getLogger(__name__)


def model_tensors(model: ModelState) -> list[tuple[str, np.ndarray]]:
    """Every parameter of ``model`` under its checkpoint name, in a fixed order."""
    pairs = [("embed", model.embed), ("head", model.head), ("final_norm", model.final_norm)]
    for block in model.layers:
        j = block.layer_id
        pairs += [(f"layer.{j}.attn_norm", block.attn_norm), (f"layer.{j}.mlp_norm", block.mlp_norm)]
        for sub in SUBLAYERS:
            lin = block.linears[sub]
            pairs += [(f"{lin.name}.W", lin.W), (f"{lin.name}.A", lin.A), (f"{lin.name}.B", lin.B)]
    return pairs


def save_model(path: str | os.PathLike, model: ModelState, attrs: Mapping[str, str] | None = None) -> None:
    meta = {
        **(attrs or {}),
        "kind": "model",
        "model_config": model.config.to_json(),  # type: ignore[attr-defined]
        "layer_ids": ",".join(map(str, model.layer_ids)),
    }
    save_container(path, model_tensors(model), meta)


def _expect_kind(attrs: Mapping[str, str], kind: str, path: str | os.PathLike) -> None:
    if attrs.get("kind") != kind:
        raise ContainerError(f"{path} holds {attrs.get('kind')!r}, expected {kind!r}")


def load_model(path: str | os.PathLike) -> ModelState:
    tensors, attrs = load_container(path)
    _expect_kind(attrs, "model", path)
    config = ModelConfig.from_json(attrs["model_config"])  # type: ignore[attr-defined]
    layer_ids = [int(j) for j in attrs["layer_ids"].split(",")] if attrs.get("layer_ids") else []

    def take(name: str) -> np.ndarray:
        if name not in tensors:
            raise ContainerError(f"{path} lacks tensor {name}")
        return tensors[name].astype(Params().dtype, copy=False)

    layers = []
    for j in layer_ids:
        linears = {}
        for sub in SUBLAYERS:
            name = linear_name(j, sub)
            linears[sub] = LinearWithLora(
                name, take(f"{name}.W"), take(f"{name}.A"), take(f"{name}.B"), config.lora_alpha
            )
        layers.append(LayerBlock(j, linears, take(f"layer.{j}.attn_norm"), take(f"layer.{j}.mlp_norm")))
    model = ModelState(config, take("embed"), take("head"), take("final_norm"), layers)
    log.info("loaded model with layers %s from %s", layer_ids, path)
    return model


def save_igia(path: str | os.PathLike, igia: Mapping[str, IgiaMatrix], attrs: Mapping[str, str] | None = None) -> None:
    steps = {m.steps_seen for m in igia.values()}
    if len(steps) > 1:
        raise ContainerError(f"IGIA matrices disagree on steps_seen: {sorted(steps)}")
    meta = {**(attrs or {}), "kind": "igia", "steps_seen": str(steps.pop() if steps else 0)}
    save_container(path, [(f"{name}.igia", m.F) for name, m in igia.items()], meta)


def load_igia(path: str | os.PathLike) -> dict[str, IgiaMatrix]:
    tensors, attrs = load_container(path)
    _expect_kind(attrs, "igia", path)
    steps = int(attrs["steps_seen"])
    igia = {}
    for key, F in tensors.items():
        if not key.endswith(".igia"):
            raise ContainerError(f"{path}: unexpected tensor {key}")
        name = key[: -len(".igia")]
        igia[name] = IgiaMatrix(name, F.astype(Params().dtype, copy=False), steps)
    return igia
