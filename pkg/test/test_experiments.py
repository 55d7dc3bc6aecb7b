import dataclasses
import math

import pytest

from experiments.common import TOY_CONFIG, TOY_RECOVER_STEPS, prepare_toy, recovery_train
from igprune.analysis import (
    compare_strategies,
    importance_direction,
    prepare_experiment,
    run_sensitivity,
    sweep_merge_count,
    sweep_sparsity,
)
from igprune.model import build_model
from igprune.train import make_dataset


@pytest.mark.slow
class TestToyRun:
    def setup_method(self):
        self.config = TOY_CONFIG.with_values(seed=42)
        self.train = dataclasses.replace(self.config.train, total_steps=200)
        self.data = make_dataset(self.config.task_spec(), self.config.dataset_size, self.config.data_seed)
        self.model = build_model(self.config.model, self.config.train.seed)

    def test_sensitivity(self):
        result = run_sensitivity(self.model, self.data, self.train, (0.01, 0.1, 0.5))
        assert [s for s, _ in result.curve()] == [2, 20, 100, 200]
        assert result.curve()[-1][1] == 1.0

    def test_strategies(self):
        exp = prepare_experiment(self.model, self.data, self.train)
        rows = compare_strategies(exp, self.config.n_prune, self.config.n_merge)
        assert len(rows) == 5
        assert all(math.isfinite(r["perplexity"]) for r in rows)


@pytest.mark.slow
class TestToyPruning:
    """The default toy run of the experiment scripts: seed 0, 300 full fine-tune steps before pruning."""

    @classmethod
    def setup_class(cls):
        cls.config, cls.model, cls.data = prepare_toy()
        cls.exp = prepare_experiment(cls.model, cls.data, recovery_train(cls.config))

    def test_early_ranking_overlap(self, anchors):
        # 1% of T = 2000 is step 20
        result = run_sensitivity(self.model, self.data, self.config.train, (0.01,), k=2)
        (early, overlap), (final, last) = result.curve()
        assert (early, final, last) == (20, 2000, 1.0)
        anchors.at_least("toy.top2_overlap_at_step_20", overlap)

    def test_importance_direction(self):
        lowest, highest = importance_direction(self.exp)
        assert (lowest["layer"], highest["layer"]) == (2, 0)
        assert lowest["loss"] == pytest.approx(3.1200, abs=5e-5)
        assert highest["loss"] == pytest.approx(3.2344, abs=5e-5)
        assert lowest["loss"] <= highest["loss"]

    def test_merge_count_direct(self):
        rows = sweep_merge_count(self.exp, 2, [0, 1, 2])
        losses = [r["loss"] for r in rows]
        # without recovery the merged weights act on a model still close to its init
        assert losses == pytest.approx([3.3455347534453415, 3.3739356437082932, 3.5355625409873737], rel=1e-9)

    def test_merge_beats_discard_after_recovery(self, anchors):
        exp = dataclasses.replace(self.exp, recover_steps=TOY_RECOVER_STEPS)
        discard, merged = sweep_merge_count(exp, self.config.n_prune, [0, 1])
        anchors.check("toy.recovered.discard_loss", discard["loss"])
        anchors.check("toy.recovered.merge_one_loss", merged["loss"])
        assert merged["loss"] <= discard["loss"]

    def test_sparsity_sweep(self):
        rows = sweep_sparsity(self.exp, self.config.n_prune, self.config.n_merge)
        assert [r["sparsity_p"] for r in rows] == [0.5, 0.6, 0.7, 0.8, 0.9]
        losses = [r["loss"] for r in rows]
        assert losses == pytest.approx([3.3598, 3.3705, 3.3897, 3.3739, 3.3864], abs=5e-5)
        best = min(rows, key=lambda r: (r["loss"], r["sparsity_p"]))
        assert best["sparsity_p"] == 0.5
