"""Toy decoder-only transformer with exact, hand-derived backward passes.

Every block is pre-norm: RMSNorm -> causal multi-head attention -> residual,
RMSNorm -> gated (SwiGLU) MLP -> residual. Positions are encoded with a fixed
sinusoidal table added to the token embeddings. All seven projections of a
block (q, k, v, o, gate, up, down) carry a low-rank adapter; the embedding,
the final norm and the output head do not.

Activations are kept on a ``Tape`` by ``forward`` and consumed by
``backward``; no autodiff graph is built.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, NamedTuple

import numpy as np
import numpy.typing as npt

from igprune.model.config import ModelConfig, SUBLAYERS
from igprune.model.lora import LinearWithLora
from igprune.numerics import Tensor, DimensionError
from igprune.params import Params

__all__ = [
    "TokenRangeError",
    "SequenceTooLongError",
    "TapeMismatchError",
    "LayerBlock",
    "ModelState",
    "GradRecord",
    "Tape",
    "BackwardResult",
    "linear_name",
    "build_model",
    "forward",
    "backward",
    "cross_entropy",
    "loss_only",
]


class TokenRangeError(ValueError):
    pass


class SequenceTooLongError(ValueError):
    pass


class TapeMismatchError(ValueError):
    pass


def linear_name(layer_id: int, sublayer: str) -> str:
    return f"layer.{layer_id}.{sublayer}"


@dataclass
class LayerBlock:
    """One transformer block: seven adapted projections and two RMSNorm gains."""

    layer_id: int
    linears: dict[str, LinearWithLora]
    attn_norm: Tensor
    mlp_norm: Tensor

    def copy(self) -> "LayerBlock":
        return LayerBlock(
            self.layer_id,
            {sub: lin.copy() for sub, lin in self.linears.items()},
            self.attn_norm.copy(),
            self.mlp_norm.copy(),
        )

    def param_count(self) -> int:
        return sum(lin.W.size for lin in self.linears.values()) + self.attn_norm.size + self.mlp_norm.size


@dataclass
class ModelState:
    """
    All parameters of the toy language model.

    Attributes
    ----------
        config (ModelConfig): Shape the model was built with.
        embed (Tensor): Token embeddings, (vocab_size, d_model).
        head (Tensor): Output projection, (vocab_size, d_model).
        final_norm (Tensor): Gain of the RMSNorm before the head, (d_model,).
        layers (list[LayerBlock]): Surviving blocks in depth order.

    Methods
    -------
        layer_ids: original indices of the surviving blocks.
        iter_linears(): every adapted projection, block by block.
        linear(name): look a projection up by its qualified name.
        clone(): deep copy.
    """

    config: ModelConfig
    embed: Tensor
    head: Tensor
    final_norm: Tensor
    layers: list[LayerBlock] = field(default_factory=list)

    @property
    def layer_ids(self) -> list[int]:
        return [block.layer_id for block in self.layers]

    def block(self, layer_id: int) -> LayerBlock:
        for b in self.layers:
            if b.layer_id == layer_id:
                return b
        raise KeyError(f"layer {layer_id} is not part of the model")

    def iter_linears(self) -> Iterator[LinearWithLora]:
        for block in self.layers:
            for sub in SUBLAYERS:
                yield block.linears[sub]

    def linear(self, name: str) -> LinearWithLora:
        _, layer_id, sub = name.split(".")
        return self.block(int(layer_id)).linears[sub]

    def clone(self) -> "ModelState":
        return ModelState(
            self.config,
            self.embed.copy(),
            self.head.copy(),
            self.final_norm.copy(),
            [b.copy() for b in self.layers],
        )


@dataclass
class GradRecord:
    """
    Adapter gradients of one training step.

    Attributes
    ----------
        step (int): 1-based training-step index.
        grads (dict[str, tuple[Tensor, Tensor]]): linear name -> (grad W_A, grad W_B).
    """

    step: int
    grads: dict[str, tuple[Tensor, Tensor]]

    def names(self) -> list[str]:
        return list(self.grads)


class BackwardResult(NamedTuple):
    loss: float
    grads: GradRecord
    full_grads: dict[str, Tensor] | None


@dataclass
class Tape:
    tokens: npt.NDArray[np.int64]
    single: bool
    model_id: int
    layer_ids: tuple[int, ...]
    logits: Tensor
    blocks: list[dict]
    final: dict


@lru_cache(maxsize=16)
def _positional_table(seq_len: int, d_model: int) -> Tensor:
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    idx = np.arange(d_model)[None, :]
    rates = np.power(10000.0, -(2 * (idx // 2)) / d_model)
    table = np.where(idx % 2 == 0, np.sin(pos * rates), np.cos(pos * rates))
    table.setflags(write=False)
    return table


def build_model(config: ModelConfig, seed: int) -> ModelState:
    """Seeded initialisation; the same (config, seed) always yields bit-identical weights."""
    if not isinstance(config, ModelConfig):
        raise TypeError("config must be a ModelConfig")
    rng = np.random.default_rng(seed)
    d, V = config.d_model, config.vocab_size
    residual_scale = (2 * config.n_layers) ** -0.5

    embed = rng.normal(0.0, 1.0, size=(V, d))
    layers = []
    for j in range(config.n_layers):
        linears = {}
        for sub in SUBLAYERS:
            out_dim, in_dim = config.linear_shape(sub)
            std = in_dim**-0.5
            if sub in ("o", "down"):
                std *= residual_scale
            W = rng.normal(0.0, std, size=(out_dim, in_dim))
            A = rng.normal(0.0, in_dim**-0.5, size=(config.lora_rank, in_dim))
            B = np.zeros((out_dim, config.lora_rank))
            linears[sub] = LinearWithLora(linear_name(j, sub), W, A, B, config.lora_alpha)
        layers.append(LayerBlock(j, linears, np.ones(d), np.ones(d)))
    head = rng.normal(0.0, d**-0.5, size=(V, d))
    return ModelState(config, embed, head, np.ones(d), layers)


# ----------------------------------------------------------------------
#  Primitive forward / backward pieces
# ----------------------------------------------------------------------
def _linear_fwd(x: Tensor, W: Tensor) -> Tensor:
    return np.einsum("bsi,oi->bso", x, W, optimize=False)


def _linear_bwd(dy: Tensor, x: Tensor, W: Tensor) -> tuple[Tensor, Tensor]:
    dW = np.einsum("bso,bsi->oi", dy, x, optimize=False)
    dx = np.einsum("bso,oi->bsi", dy, W, optimize=False)
    return dW, dx


def _rms_fwd(x: Tensor, gain: Tensor) -> tuple[Tensor, dict]:
    ms = np.mean(x * x, axis=-1, keepdims=True)
    r = np.sqrt(ms + Params().norm_eps)
    n = x / r
    return n * gain, {"n": n, "r": r, "gain": gain}


def _rms_bwd(dy: Tensor, cache: dict) -> tuple[Tensor, Tensor]:
    n, r, gain = cache["n"], cache["r"], cache["gain"]
    dgain = np.einsum("bsd,bsd->d", dy, n, optimize=False)
    dn = dy * gain
    dx = (dn - n * np.mean(dn * n, axis=-1, keepdims=True)) / r
    return dgain, dx


def _sigmoid(x: Tensor) -> Tensor:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, s, d = x.shape
    return x.reshape(b, s, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, s, hd = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, s, h * hd)


def _block_fwd(block: LayerBlock, x: Tensor, config: ModelConfig) -> tuple[Tensor, dict]:
    weights = {sub: lin.effective_weight() for sub, lin in block.linears.items()}
    seq = x.shape[1]
    scale = config.head_dim**-0.5

    a, attn_norm = _rms_fwd(x, block.attn_norm)
    q = _split_heads(_linear_fwd(a, weights["q"]), config.n_heads)
    k = _split_heads(_linear_fwd(a, weights["k"]), config.n_heads)
    v = _split_heads(_linear_fwd(a, weights["v"]), config.n_heads)
    scores = np.einsum("bhqd,bhkd->bhqk", q, k, optimize=False) * scale
    causal = np.tril(np.ones((seq, seq), dtype=bool))
    scores = np.where(causal, scores, -np.inf)
    scores = scores - np.max(scores, axis=-1, keepdims=True)
    p = np.exp(scores)
    p = p / np.sum(p, axis=-1, keepdims=True)
    ctx = _merge_heads(np.einsum("bhqk,bhkd->bhqd", p, v, optimize=False))
    x1 = x + _linear_fwd(ctx, weights["o"])

    m, mlp_norm = _rms_fwd(x1, block.mlp_norm)
    g = _linear_fwd(m, weights["gate"])
    u = _linear_fwd(m, weights["up"])
    sig = _sigmoid(g)
    silu = g * sig
    h = silu * u
    x2 = x1 + _linear_fwd(h, weights["down"])

    cache = {
        "weights": weights,
        "attn_norm": attn_norm,
        "a": a,
        "q": q,
        "k": k,
        "v": v,
        "p": p,
        "ctx": ctx,
        "mlp_norm": mlp_norm,
        "m": m,
        "g": g,
        "u": u,
        "sig": sig,
        "silu": silu,
        "h": h,
    }
    return x2, cache


def _block_bwd(dx2: Tensor, cache: dict, config: ModelConfig) -> tuple[Tensor, dict[str, Tensor], Tensor, Tensor]:
    weights = cache["weights"]
    dW: dict[str, Tensor] = {}
    scale = config.head_dim**-0.5

    # MLP branch
    dW["down"], dh = _linear_bwd(dx2, cache["h"], weights["down"])
    du = dh * cache["silu"]
    sig, g = cache["sig"], cache["g"]
    dg = dh * cache["u"] * sig * (1.0 + g * (1.0 - sig))
    dW["gate"], dm_gate = _linear_bwd(dg, cache["m"], weights["gate"])
    dW["up"], dm_up = _linear_bwd(du, cache["m"], weights["up"])
    dmlp_norm, dx1_norm = _rms_bwd(dm_gate + dm_up, cache["mlp_norm"])
    dx1 = dx2 + dx1_norm

    # attention branch
    dW["o"], dctx = _linear_bwd(dx1, cache["ctx"], weights["o"])
    dctx_h = _split_heads(dctx, config.n_heads)
    p, q, k, v = cache["p"], cache["q"], cache["k"], cache["v"]
    dp = np.einsum("bhqd,bhkd->bhqk", dctx_h, v, optimize=False)
    dv = np.einsum("bhqk,bhqd->bhkd", p, dctx_h, optimize=False)
    dscores = p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) * scale
    dq = np.einsum("bhqk,bhkd->bhqd", dscores, k, optimize=False)
    dk = np.einsum("bhqk,bhqd->bhkd", dscores, q, optimize=False)
    a = cache["a"]
    dW["q"], da_q = _linear_bwd(_merge_heads(dq), a, weights["q"])
    dW["k"], da_k = _linear_bwd(_merge_heads(dk), a, weights["k"])
    dW["v"], da_v = _linear_bwd(_merge_heads(dv), a, weights["v"])
    dattn_norm, dx_norm = _rms_bwd(da_q + da_k + da_v, cache["attn_norm"])
    return dx1 + dx_norm, dW, dattn_norm, dmlp_norm


# ----------------------------------------------------------------------
#  Public passes
# ----------------------------------------------------------------------
def _as_token_batch(tokens: npt.ArrayLike, config: ModelConfig, what: str = "token") -> tuple[np.ndarray, bool]:
    tok = np.asarray(tokens, dtype=np.int64)
    single = tok.ndim == 1
    if single:
        tok = tok[None, :]
    if tok.ndim != 2 or tok.shape[1] == 0:
        raise DimensionError(f"{what} sequence must be [seq] or [batch, seq] and nonempty", tok.shape)
    return tok, single


def forward(model: ModelState, tokens: npt.ArrayLike) -> tuple[Tensor, Tape]:
    """Causal logits, [seq, vocab] for one sequence or [batch, seq, vocab] for a batch."""
    config = model.config
    tok, single = _as_token_batch(tokens, config)
    if np.any(tok < 0) or np.any(tok >= config.vocab_size):
        raise TokenRangeError(f"token ids must lie in [0, {config.vocab_size})")
    if tok.shape[1] > config.max_seq:
        raise SequenceTooLongError(f"sequence length {tok.shape[1]} exceeds max_seq {config.max_seq}")

    x = model.embed[tok] + _positional_table(tok.shape[1], config.d_model)
    caches = []
    for block in model.layers:
        x, cache = _block_fwd(block, x, config)
        caches.append(cache)
    f, final_norm = _rms_fwd(x, model.final_norm)
    logits = np.einsum("bsd,vd->bsv", f, model.head, optimize=False)

    tape = Tape(
        tokens=tok,
        single=single,
        model_id=id(model),
        layer_ids=tuple(model.layer_ids),
        logits=logits,
        blocks=caches,
        final={"f": f, "norm": final_norm},
    )
    return (logits[0] if single else logits), tape


def cross_entropy(logits: Tensor, targets: np.ndarray) -> tuple[float, Tensor]:
    """Mean token cross-entropy over targets != ignore index, and its gradient."""
    ignore = Params().ignore_index
    mask = targets != ignore
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise ValueError("no scored targets in batch")
    vocab = logits.shape[-1]
    if np.any(mask & ((targets < 0) | (targets >= vocab))):
        raise TokenRangeError(f"target ids must lie in [0, {vocab}) or equal {ignore}")

    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    logp = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    safe = np.where(mask, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -float(np.einsum("i->", np.where(mask, picked, 0.0).ravel(), optimize=False)) / count

    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, safe[..., None], np.take_along_axis(dlogits, safe[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= mask[..., None] / count
    return loss, dlogits


def backward(
    model: ModelState,
    tape: Tape,
    targets: npt.ArrayLike,
    *,
    full: bool = False,
    step: int = 1,
) -> BackwardResult:
    """
    Exact gradients of the mean token cross-entropy.

    Adapter gradients are always returned. With ``full=True`` the gradients of
    every base weight, norm gain, the embedding and the head are returned as
    well, keyed ``layer.<j>.<sub>``, ``layer.<j>.attn_norm``,
    ``layer.<j>.mlp_norm``, ``final_norm``, ``embed`` and ``head``.
    """
    if tape.model_id != id(model) or tape.layer_ids != tuple(model.layer_ids):
        raise TapeMismatchError("tape was not produced by a forward pass of this model")
    config = model.config
    tgt, _ = _as_token_batch(targets, config, "target")
    if tgt.shape != tape.tokens.shape:
        raise TapeMismatchError(f"targets shape {tgt.shape} does not match tape tokens {tape.tokens.shape}")

    loss, dlogits = cross_entropy(tape.logits, tgt)
    f = tape.final["f"]
    dhead = np.einsum("bsv,bsd->vd", dlogits, f, optimize=False)
    df = np.einsum("bsv,vd->bsd", dlogits, model.head, optimize=False)
    dfinal_norm, dx = _rms_bwd(df, tape.final["norm"])

    adapter_grads: dict[str, tuple[Tensor, Tensor]] = {}
    full_grads: dict[str, Tensor] = {}
    per_layer = []
    for block, cache in zip(reversed(model.layers), reversed(tape.blocks)):
        dx, dW, dattn_norm, dmlp_norm = _block_bwd(dx, cache, config)
        per_layer.append((block, dW, dattn_norm, dmlp_norm))

    for block, dW, dattn_norm, dmlp_norm in reversed(per_layer):
        for sub in SUBLAYERS:
            lin = block.linears[sub]
            grad_a = lin.alpha * np.einsum("or,oi->ri", lin.B, dW[sub], optimize=False)
            grad_b = lin.alpha * np.einsum("oi,ri->or", dW[sub], lin.A, optimize=False)
            adapter_grads[lin.name] = (grad_a, grad_b)
            if full:
                full_grads[lin.name] = dW[sub]
        if full:
            full_grads[f"layer.{block.layer_id}.attn_norm"] = dattn_norm
            full_grads[f"layer.{block.layer_id}.mlp_norm"] = dmlp_norm

    if full:
        dembed = np.zeros_like(model.embed)
        np.add.at(dembed, tape.tokens, dx)
        full_grads["embed"] = dembed
        full_grads["head"] = dhead
        full_grads["final_norm"] = dfinal_norm

    return BackwardResult(loss, GradRecord(step, adapter_grads), full_grads if full else None)


def loss_only(model: ModelState, tokens: npt.ArrayLike, targets: npt.ArrayLike) -> float:
    _, tape = forward(model, tokens)
    tgt, _ = _as_token_batch(targets, model.config, "target")
    loss, _ = cross_entropy(tape.logits, tgt)
    return loss
