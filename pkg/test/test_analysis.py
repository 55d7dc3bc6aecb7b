import dataclasses
import io
import math

import numpy as np
import pytest

from igprune.analysis import (
    EVAL_COLUMNS,
    AnalysisError,
    RankingSnapshot,
    capture_steps,
    compare_strategies,
    data_size_stability,
    default_topk,
    evaluate,
    importance_direction,
    param_report,
    prepare_experiment,
    rank_correlation,
    run_sensitivity,
    score_logits,
    sensitivity_curve,
    step_count_ablation,
    sweep_merge_count,
    sweep_sparsity,
    topk_overlap,
    write_csv,
)
from igprune.importance import compute_igia, layer_scores, rank_layers
from igprune.merge import MergeStrategy
from igprune.model import ModelConfig, build_model, drop_layers
from igprune.train import TaskSpec, TrainConfig, make_dataset

SMALL = ModelConfig(n_layers=4, d_model=16, n_heads=2, d_ff=32, vocab_size=12, max_seq=16, lora_rank=4, lora_alpha=2.0)


class TestRankingMetrics:
    def test_topk_full_scale(self):
        reference = RankingSnapshot(2000, tuple(range(32)))
        # swap two layers across the top-20 boundary
        swapped = list(range(32))
        swapped[18], swapped[25] = swapped[25], swapped[18]
        swapped[19], swapped[26] = swapped[26], swapped[19]
        assert default_topk(32) == 20
        assert topk_overlap(RankingSnapshot(20, tuple(swapped)), reference, 20) == 0.9

    def test_topk_identical(self):
        snap = RankingSnapshot(1, (3, 1, 0, 2))
        assert topk_overlap(snap, snap, 2) == 1.0

    @pytest.mark.parametrize("k", [0, 5])
    def test_topk_bad_k(self, k):
        snap = RankingSnapshot(1, (3, 1, 0, 2))
        with pytest.raises(AnalysisError):
            topk_overlap(snap, snap, k)

    def test_default_topk(self):
        assert [default_topk(n) for n in (1, 2, 4, 5, 10)] == [1, 2, 3, 3, 6]

    def test_spearman_example(self):
        assert rank_correlation(RankingSnapshot(1, (0, 1, 2, 3)), RankingSnapshot(2, (0, 2, 1, 3))) == pytest.approx(
            0.8, rel=1e-12
        )

    def test_spearman_extremes(self):
        a = RankingSnapshot(1, (0, 1, 2, 3, 4))
        assert rank_correlation(a, a) == 1.0
        assert rank_correlation(a, RankingSnapshot(1, (4, 3, 2, 1, 0))) == -1.0
        assert rank_correlation(RankingSnapshot(1, (7,)), RankingSnapshot(2, (7,))) == 1.0

    def test_spearman_needs_same_layers(self):
        with pytest.raises(AnalysisError):
            rank_correlation(RankingSnapshot(1, (0, 1)), RankingSnapshot(1, (0, 2)))

    def test_snapshot_rejects_repeats(self):
        with pytest.raises(AnalysisError):
            RankingSnapshot(1, (0, 0, 1))

    def test_curve_is_sorted(self):
        reference = RankingSnapshot(10, (2, 0, 1))
        curve = sensitivity_curve([reference, RankingSnapshot(1, (1, 0, 2))], reference, 1)
        assert curve == [(1, 0.0), (10, 1.0)]
        with pytest.raises(AnalysisError):
            sensitivity_curve([], reference, 1)


class TestScoring:
    def test_one_hot_logits(self):
        targets = np.array([[2, -1, 0], [1, 1, -1]])
        logits = np.where(np.arange(4) == np.where(targets < 0, 3, targets)[..., None], 30.0, 0.0)
        loss, accuracy, count = score_logits(logits, targets)
        assert count == 4
        assert accuracy == 1.0
        assert loss < 1e-10

    def test_zeroed_head_gives_vocab_perplexity(self):
        model = build_model(SMALL, seed=42)
        model.head[:] = 0.0
        data = make_dataset(TaskSpec("copy", vocab_size=12, seq_len=8), 40, seed=42)
        report = evaluate(model, data)
        assert report.perplexity == pytest.approx(12.0, rel=1e-12)
        assert report.samples == 8
        assert report.tokens == 8 * 5

    def test_empty_heldout(self):
        data = make_dataset(TaskSpec("copy", vocab_size=12, seq_len=8), 40, seed=42)
        with pytest.raises(AnalysisError):
            evaluate(build_model(SMALL, seed=0), dataclasses.replace(data, heldout=[]))

    def test_param_report(self):
        config = ModelConfig(n_layers=32, d_model=4, n_heads=1, d_ff=4, vocab_size=5, max_seq=4, lora_rank=1)
        model = build_model(config, seed=0)
        pruned = drop_layers(model, range(19, 32))
        report = param_report(model, pruned)
        assert report.ratio == 13 / 32
        assert report.removed == tuple(range(19, 32))
        assert report.block_before - report.block_after == 13 * config.block_params()
        assert report.total_before - report.total_after == 13 * config.block_params()
        assert param_report(model, model).ratio == 0.0
        assert "block ratio removed: 0.406250" in report.format()

    def test_write_csv(self):
        out = io.StringIO()
        write_csv([{"a": 1, "b": 0.5, "c": "x"}, {"a": 2, "b": "", "c": "y"}], ["a", "b"], out)
        assert out.getvalue() == "a,b\n1,0.5\n2,\n"


class TestSensitivity:
    def setup_method(self):
        self.model = build_model(SMALL, seed=42)
        self.data = make_dataset(TaskSpec("copy", vocab_size=12, seq_len=8), 64, seed=42)
        self.config = TrainConfig(total_steps=20, probe_steps=2, batch_size=8, learning_rate=0.01)

    def test_capture_steps(self):
        steps = capture_steps(TrainConfig(total_steps=2000), (0.0002, 0.0005, 0.0008, 0.01, 0.05, 0.1, 0.5, 1.0))
        assert steps == {1: 0.0002, 2: 0.0008, 20: 0.01, 100: 0.05, 200: 0.1, 1000: 0.5, 2000: 1.0}

    def test_curve_ends_at_one(self):
        result = run_sensitivity(self.model, self.data, self.config, (0.05, 0.5), keep_igia=True)
        assert result.k == 3
        assert [s for s, _ in result.curve()] == [1, 10, 20]
        assert result.curve()[-1] == (20, 1.0)
        assert sorted(result.igia_at) == [1, 10, 20]
        rows = result.rows()
        assert [r["fraction"] for r in rows] == [0.05, 0.5, 1.0]

    def test_first_step_ranks_by_index(self):
        # the first IGIA is all zero, so every layer ties
        result = run_sensitivity(self.model, self.data, self.config, (0.05,))
        assert result.snapshots[0].step == 1
        assert result.snapshots[0].ranking == (0, 1, 2, 3)

    def test_reference_matches_full_probe(self):
        result = run_sensitivity(self.model, self.data, self.config, (0.5,))
        igia = compute_igia(self.model, self.data, dataclasses.replace(self.config, probe_steps=20))
        expected = rank_layers(layer_scores(igia, self.model.layer_ids))
        assert list(result.reference.ranking) == expected

    def test_needs_steps(self):
        with pytest.raises(AnalysisError):
            run_sensitivity(self.model, self.data, TrainConfig(total_steps=0, probe_steps=0))


class TestAblations:
    def setup_method(self):
        self.model = build_model(SMALL, seed=42)
        self.data = make_dataset(TaskSpec("copy", vocab_size=12, seq_len=8), 64, seed=42)
        self.config = TrainConfig(total_steps=10, probe_steps=4, batch_size=8, learning_rate=0.01)
        self.exp = prepare_experiment(self.model, self.data, self.config)

    def assert_rows(self, rows, key):
        for row in rows:
            assert key in row
            for column in EVAL_COLUMNS:
                assert math.isfinite(row[column])

    def test_sweep_sparsity(self):
        rows = sweep_sparsity(self.exp, 2, 1, (0.5, 0.9))
        assert [r["sparsity_p"] for r in rows] == [0.5, 0.9]
        assert all(r["ratio"] == 0.5 for r in rows)
        self.assert_rows(rows, "sparsity_p")

    def test_sweep_merge_count(self):
        rows = sweep_merge_count(self.exp, 2, [0, 1, 2])
        assert [r["merge_count"] for r in rows] == [0, 1, 2]
        self.assert_rows(rows, "merge_count")

    def test_compare_strategies(self):
        rows = compare_strategies(self.exp, 2, 1)
        assert [r["strategy"] for r in rows] == ["none"] + [s.value for s in MergeStrategy]
        self.assert_rows(rows, "strategy")

    def test_importance_direction(self):
        rows = importance_direction(self.exp)
        ranking = rank_layers(self.exp.scores)
        assert [(r["pruned"], r["layer"]) for r in rows] == [("lowest", ranking[-1]), ("highest", ranking[0])]
        assert all(r["ratio"] == 0.25 for r in rows)

    def test_recovery_runs(self):
        exp = dataclasses.replace(self.exp, recover_steps=3)
        rows = sweep_merge_count(exp, 1, [1])
        self.assert_rows(rows, "merge_count")

    def test_data_size_stability(self):
        rows = data_size_stability(self.model, self.data, self.config, (0.25, 1.0))
        assert [r["fraction"] for r in rows] == [0.25, 1.0]
        assert rows[-1]["topk_overlap"] == 1.0
        assert rows[-1]["spearman"] == 1.0
        assert rows[0]["samples"] == 13

    def test_step_count_ablation(self):
        rows = step_count_ablation(self.model, self.data, self.config, (0.1, 0.5))
        assert [r["steps"] for r in rows] == [1, 5, 10]
        assert rows[-1]["topk_overlap"] == 1.0
        self.assert_rows(rows, "steps")
