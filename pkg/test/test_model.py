import numpy as np
import pytest

from igprune.model import (
    ConfigError,
    LinearWithLora,
    ModelConfig,
    SurgeryError,
    block_parameter_counts,
    build_model,
    count_parameters,
    drop_layers,
    fold_adapters,
    forward,
    merge_lora,
    reset_adapters,
)
from igprune.numerics import DimensionError


class TestModelConfig:
    def test_shapes(self):
        c = ModelConfig(d_model=8, n_heads=2, d_ff=12, vocab_size=5, lora_rank=2)
        assert c.linear_shape("q") == (8, 8)
        assert c.linear_shape("gate") == (12, 8)
        assert c.linear_shape("down") == (8, 12)
        assert c.head_dim == 4
        assert c.block_params() == 4 * 64 + 3 * 96 + 16
        assert c.adapter_params() == 2 * (4 * 16 + 3 * 20)
        assert c.outer_params() == 2 * 5 * 8 + 8

    @pytest.mark.parametrize(
        "kw", [dict(n_layers=0), dict(d_model=10, n_heads=4), dict(lora_alpha=-1.0), dict(vocab_size=0)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ModelConfig(**kw)

    def test_json_round_trip(self):
        c = ModelConfig(n_layers=3, lora_alpha=8.0)
        assert ModelConfig.from_json(c.to_json()) == c  # type: ignore[attr-defined]


class TestLora:
    def setup_method(self):
        self.rng = np.random.default_rng(42)
        self.W = self.rng.normal(size=(6, 4))
        self.A = self.rng.normal(size=(2, 4))
        self.B = self.rng.normal(size=(6, 2))

    def test_effective_weight(self):
        lin = LinearWithLora("layer.0.q", self.W, self.A, self.B, 16.0)
        np.testing.assert_allclose(merge_lora(lin), self.W + 16.0 * self.B @ self.A, rtol=1e-12)

    def test_zero_b_is_identity(self):
        lin = LinearWithLora("layer.0.q", self.W, self.A, np.zeros((6, 2)), 16.0)
        assert merge_lora(lin).tobytes() == self.W.tobytes()

    def test_shape_validation(self):
        with pytest.raises(DimensionError):
            LinearWithLora("layer.0.q", self.W, self.A, np.zeros((5, 2)), 16.0)

    def test_reset(self):
        lin = LinearWithLora("layer.0.q", self.W, self.A, self.B, 16.0)
        lin.reset_adapter(np.random.default_rng(0))
        assert not lin.B.any()
        assert lin.A.shape == (2, 4)


class TestSurgery:
    def setup_method(self):
        self.config = ModelConfig(n_layers=4, d_model=8, n_heads=2, d_ff=16, vocab_size=7, max_seq=8, lora_rank=2)
        self.model = build_model(self.config, seed=42)

    def test_drop_layers(self):
        pruned = drop_layers(self.model, [1, 3])
        assert pruned.layer_ids == [0, 2]
        assert self.model.layer_ids == [0, 1, 2, 3]
        assert pruned.block(2).linears["q"].W.tobytes() == self.model.block(2).linears["q"].W.tobytes()
        logits, _ = forward(pruned, [1, 2, 3])
        assert np.all(np.isfinite(logits))

    def test_drop_nothing(self):
        assert drop_layers(self.model, []).layer_ids == [0, 1, 2, 3]

    @pytest.mark.parametrize("pruned", [[4], [0, 1, 2, 3]])
    def test_drop_invalid(self, pruned):
        with pytest.raises(SurgeryError):
            drop_layers(self.model, pruned)

    def test_counts(self):
        counts = block_parameter_counts(self.model)
        assert counts == {j: self.config.block_params() for j in range(4)}
        assert count_parameters(self.model) == 4 * self.config.block_params() + self.config.outer_params()
        with_adapters = count_parameters(self.model, include_adapters=True)
        assert with_adapters - count_parameters(self.model) == 4 * self.config.adapter_params()

    def test_drop_reduces_count(self):
        before = count_parameters(self.model)
        after = count_parameters(drop_layers(self.model, [2]))
        assert before - after == self.config.block_params()

    def test_fold_adapters_keeps_function(self):
        rng = np.random.default_rng(1)
        for lin in self.model.iter_linears():
            lin.B = rng.normal(0.0, 0.1, size=lin.B.shape)
        folded = fold_adapters(self.model)
        assert all(not lin.B.any() for lin in folded.iter_linears())
        a, _ = forward(self.model, [1, 2, 3, 4])
        b, _ = forward(folded, [1, 2, 3, 4])
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_reset_adapters(self):
        fresh = reset_adapters(self.model, seed=3)
        for old, new in zip(self.model.iter_linears(), fresh.iter_linears()):
            assert old.W.tobytes() == new.W.tobytes()
            assert not new.B.any()

    def test_reset_adapters_keeps_learned_update(self):
        rng = np.random.default_rng(1)
        for lin in self.model.iter_linears():
            lin.B = rng.normal(0.0, 0.1, size=lin.B.shape)
        fresh = reset_adapters(self.model, seed=3)
        assert all(not lin.B.any() for lin in fresh.iter_linears())
        a, _ = forward(self.model, [1, 2, 3, 4])
        b, _ = forward(fresh, [1, 2, 3, 4])
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
