from dataclasses import dataclass

from dataclasses_json import dataclass_json

from igprune.params import Params

__all__ = ["ConfigError", "ModelConfig", "SUBLAYERS", "ATTENTION_SUBLAYERS", "MLP_SUBLAYERS"]

ATTENTION_SUBLAYERS = ("q", "k", "v", "o")
MLP_SUBLAYERS = ("gate", "up", "down")
SUBLAYERS = ATTENTION_SUBLAYERS + MLP_SUBLAYERS


class ConfigError(ValueError):
    pass


@dataclass_json
@dataclass(frozen=True)
class ModelConfig:
    """
    Shape of the toy decoder-only transformer.

    Attributes
    ----------
        n_layers (int): Number of transformer blocks K.
        d_model (int): Embedding width.
        n_heads (int): Attention heads; must divide d_model.
        d_ff (int): Hidden width of the gated MLP.
        vocab_size (int): Number of token ids.
        max_seq (int): Longest accepted token sequence.
        lora_rank (int): Rank r of every adapter.
        lora_alpha (float): Adapter scale; the effective weight is W + alpha * W_B @ W_A.
    """

    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    vocab_size: int = 32
    max_seq: int = 32
    lora_rank: int = Params().lora_rank
    lora_alpha: float = Params().lora_alpha

    def __post_init__(self) -> None:
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq", "lora_rank"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be ≥ 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"n_heads ({self.n_heads}) must divide d_model ({self.d_model})")
        if self.lora_alpha < 0:
            raise ConfigError(f"lora_alpha must be ≥ 0, got {self.lora_alpha}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def linear_shape(self, sublayer: str) -> tuple[int, int]:
        """(out, in) shape of the base weight of ``sublayer``."""
        if sublayer in ATTENTION_SUBLAYERS:
            return (self.d_model, self.d_model)
        if sublayer in ("gate", "up"):
            return (self.d_ff, self.d_model)
        if sublayer == "down":
            return (self.d_model, self.d_ff)
        raise KeyError(sublayer)

    def block_params(self) -> int:
        """Base weights plus the two norm gains of one block; adapters excluded."""
        return sum(o * i for o, i in map(self.linear_shape, SUBLAYERS)) + 2 * self.d_model

    def adapter_params(self) -> int:
        return sum(self.lora_rank * (o + i) for o, i in map(self.linear_shape, SUBLAYERS))

    def outer_params(self) -> int:
        """Embedding, output head and final norm gain."""
        return 2 * self.vocab_size * self.d_model + self.d_model
