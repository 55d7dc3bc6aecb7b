import dataclasses

import numpy as np
import pytest
from parameterized import parameterized_class

from igprune.model import ModelConfig, build_model, loss_only
from igprune.train import (
    Dataset,
    GradientRecorder,
    SGD,
    TaskError,
    TaskSpec,
    TeeSink,
    TrainConfig,
    TrainingDivergedError,
    iter_batches,
    make_dataset,
    run_finetune,
    run_probe,
    subsample,
    train_step,
)

CONFIG = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, vocab_size=12, max_seq=16, lora_rank=4)


@parameterized_class(("kind", "seq_len"), [("copy", 8), ("modadd", 4), ("pattern", 9)])
class TestDatasets:
    kind: str
    seq_len: int

    def setup_method(self):
        self.task = TaskSpec(self.kind, vocab_size=12, seq_len=self.seq_len)
        self.data = make_dataset(self.task, 50, seed=42)

    def test_split_sizes(self):
        assert len(self.data) == 40
        assert len(self.data.heldout) == 10

    def test_shapes_and_shift(self):
        for x, y in self.data.samples:
            assert x.shape == y.shape == (self.task.input_len,)
            assert x.dtype == y.dtype == np.int64
            scored = y != -1
            assert scored.any()
            assert np.all((y[scored] >= 0) & (y[scored] < 12))
            # targets are the next input token where both exist
            assert np.array_equal(y[:-1][scored[:-1]], x[1:][scored[:-1]])

    def test_deterministic(self):
        again = make_dataset(self.task, 50, seed=42)
        for (x1, y1), (x2, y2) in zip(self.data.samples, again.samples):
            assert np.array_equal(x1, x2) and np.array_equal(y1, y2)


class TestDatasetRules:
    def test_copy_targets(self):
        data = make_dataset(TaskSpec("copy", vocab_size=10, seq_len=6), 4, seed=1)
        x, y = data.samples[0]
        content = x[:3]
        assert x[3] == 9
        assert list(y) == [-1, -1, 9, *content]

    def test_modadd_target(self):
        data = make_dataset(TaskSpec("modadd", vocab_size=10), 20, seed=3)
        for x, y in data.samples:
            assert y[3] == (x[0] + x[2]) % 8
            assert list(y[:3]) == [-1, -1, -1]

    @pytest.mark.parametrize(
        "kw", [dict(kind="nope"), dict(kind="copy", seq_len=7), dict(vocab_size=3), dict(kind="pattern", period=16)]
    )
    def test_invalid_task(self, kw):
        with pytest.raises(TaskError):
            TaskSpec(**kw)

    def test_too_small(self):
        with pytest.raises(TaskError):
            make_dataset(TaskSpec(), 1, seed=0)

    def test_subsample(self):
        data = make_dataset(TaskSpec(vocab_size=12, seq_len=8), 100, seed=0)
        part = subsample(data, 0.1, seed=5)
        assert len(part) == 8
        assert part.heldout is data.heldout
        assert all(any(x is s[0] for s in data.samples) for x, _ in part.samples)

    def test_batches_cover_epoch(self):
        # 25 samples leave 20 for training
        data = make_dataset(TaskSpec(vocab_size=12, seq_len=8), 25, seed=0)
        batches = iter_batches(data, 7, seed=2)
        first = [next(batches) for _ in range(3)]
        assert [epoch for epoch, _, _ in first] == [0, 0, 0]
        assert [len(x) for _, x, _ in first] == [7, 7, 6]
        seen = sorted(row.tobytes() for _, x, _ in first for row in x)
        assert seen == sorted(x.tobytes() for x, _ in data.samples)
        assert next(batches)[0] == 1


class TestTrainConfig:
    def test_probe_fraction(self):
        c = TrainConfig(total_steps=2000)
        assert c.probe_steps_from_fraction(0.01) == 20
        assert c.probe_steps_from_fraction(0.0002) == 1
        assert c.probe_steps_from_fraction(0.0) == 0
        assert c.probe_steps_from_fraction(1.0) == 2000

    @pytest.mark.parametrize(
        "kw", [dict(total_steps=5, probe_steps=6), dict(mode="qlora"), dict(batch_size=0), dict(momentum=1.0)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_full_scale_profile(self):
        c = TrainConfig.full_scale_profile()
        assert (c.learning_rate, c.batch_size, c.epochs) == (1e-5, 64, 3)


class TestTrainer:
    def setup_method(self):
        self.model = build_model(CONFIG, seed=42)
        self.data = make_dataset(TaskSpec("copy", vocab_size=12, seq_len=8), 64, seed=42)
        self.config = TrainConfig(total_steps=30, probe_steps=5, batch_size=8, learning_rate=0.005)

    def test_sgd(self):
        p = np.ones(3)
        SGD(learning_rate=0.5).update("p", p, np.array([1.0, 2.0, 0.0]))
        np.testing.assert_array_equal(p, [0.5, 0.0, 1.0])

    def test_sgd_momentum(self):
        p = np.zeros(1)
        opt = SGD(learning_rate=1.0, momentum=0.5)
        opt.update("p", p, np.ones(1))
        opt.update("p", p, np.ones(1))
        np.testing.assert_array_equal(p, [-2.5])

    def test_probe_streams_in_order(self):
        recorder = GradientRecorder()
        summary = run_probe(self.model, self.data, self.config, recorder)
        assert summary.steps == 5 and len(summary.losses) == 5
        assert [r.step for r in recorder.records] == [1, 2, 3, 4, 5]
        assert set(recorder.records[0].grads) == {lin.name for lin in self.model.iter_linears()}

    def test_probe_leaves_model_untouched(self):
        before = [(lin.W.tobytes(), lin.A.tobytes(), lin.B.tobytes()) for lin in self.model.iter_linears()]
        run_probe(self.model, self.data, self.config, GradientRecorder())
        after = [(lin.W.tobytes(), lin.A.tobytes(), lin.B.tobytes()) for lin in self.model.iter_linears()]
        assert before == after

    def test_probe_zero_steps(self):
        recorder = GradientRecorder()
        summary = run_probe(self.model, self.data, dataclasses.replace(self.config, probe_steps=0), recorder)
        assert summary.steps == 0 and recorder.records == []

    def test_probe_is_reproducible(self):
        a, b = GradientRecorder(), GradientRecorder()
        run_probe(self.model, self.data, self.config, TeeSink(a))
        run_probe(self.model, self.data, self.config, b)
        for ra, rb in zip(a.records, b.records):
            for name in ra.grads:
                assert ra.grads[name][0].tobytes() == rb.grads[name][0].tobytes()
                assert ra.grads[name][1].tobytes() == rb.grads[name][1].tobytes()

    def test_probe_needs_lora(self):
        with pytest.raises(ValueError):
            run_probe(self.model, self.data, dataclasses.replace(self.config, mode="fft"), GradientRecorder())

    def test_lora_step_keeps_base(self):
        work = self.model.clone()
        x, y = self.data.arrays()
        train_step(work, (x[:8], y[:8]), self.config)
        for old, new in zip(self.model.iter_linears(), work.iter_linears()):
            assert old.W.tobytes() == new.W.tobytes()
        assert any(new.B.any() for new in work.iter_linears())

    def test_fft_step_moves_base(self):
        work = self.model.clone()
        x, y = self.data.arrays()
        train_step(work, (x[:8], y[:8]), dataclasses.replace(self.config, mode="fft"))
        pairs = zip(self.model.iter_linears(), work.iter_linears())
        assert any(old.W.tobytes() != new.W.tobytes() for old, new in pairs)
        assert all(not new.B.any() for new in work.iter_linears())

    @pytest.mark.parametrize("mode, lr", [("lora", 5e-4), ("fft", 1e-2)])
    def test_finetune_reduces_loss(self, mode, lr):
        # one full batch, so every step is plain gradient descent on the same objective
        fixed = Dataset("fixed", 0, self.data.samples[:8])
        x, y = fixed.arrays()
        config = dataclasses.replace(self.config, mode=mode, learning_rate=lr)
        result = run_finetune(self.model, fixed, config)
        assert len(result.losses) == 30
        assert loss_only(result.model, x, y) < loss_only(self.model, x, y)

    def test_copy_task_learning_curve(self, anchors):
        data = make_dataset(TaskSpec("copy", vocab_size=12, seq_len=8), 256, seed=7)
        config = TrainConfig(mode="fft", total_steps=200, batch_size=16, learning_rate=0.02, seed=7)
        x, y = data.arrays("heldout")
        result = run_finetune(build_model(CONFIG, seed=7), data, config)
        assert len(result.losses) == 200
        assert np.mean(result.losses[-20:]) < np.mean(result.losses[:20])
        assert loss_only(result.model, x, y) < loss_only(build_model(CONFIG, seed=7), x, y)
        anchors.check("train.copy_fft_200_final_loss", result.losses[-1])

    def test_finetune_epoch_limit(self):
        # 51 training samples / batch 8 -> 7 batches per epoch
        result = run_finetune(self.model, self.data, dataclasses.replace(self.config, epochs=2))
        assert len(result.losses) == 14

    def test_finetune_nothing(self):
        result = run_finetune(self.model, self.data, dataclasses.replace(self.config, epochs=0))
        assert result.losses == []
        assert result.model is not self.model

    def test_divergence_names_linear(self):
        work = self.model.clone()
        work.block(1).linears["up"].W[0, 0] = np.nan
        x, y = self.data.arrays()
        with pytest.raises(TrainingDivergedError):
            train_step(work, (x[:8], y[:8]), self.config)
