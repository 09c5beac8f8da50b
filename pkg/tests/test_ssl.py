"""Tests for masking, EMA, the pretraining objective and the pretraining loop."""

import numpy as np
import pytest
from structlog.testing import capture_logs

from coughkit.config.base_models import LogLevel, MaskStrategy
from coughkit.config.training_models import SslConfig
from coughkit.core.rng import RngStreams
from coughkit.exceptions import InvalidParameterError, ShapeMismatchError, TrainingError
from coughkit.nn.autodiff import Tensor, float64
from coughkit.nn.checkpoint import load_checkpoint
from coughkit.nn.optim import Adam
from coughkit.nn.vit import VitModel, patchify
from coughkit.training.ssl import (
    Pretrainer,
    SslBatchOutputs,
    SslDecoder,
    ema_update,
    freeze,
    masked_count,
    pretrain_step,
    sample_batch_masks,
    sample_mask,
    ssl_losses,
    trainable_arrays,
)
from coughkit.utils.logging import configure_logging


@pytest.fixture
def ssl_config():
    """Small pretraining run."""
    return SslConfig(mask_ratio=0.5, steps=4, batch_size=4, learning_rate=1e-3)


@pytest.fixture
def patches(tiny_vit):
    """Eight random spectrogram images as patches."""
    images = np.random.default_rng(0).normal(size=(8, 1, 16, 16))
    return patchify(images, tiny_vit.patch_size)


def _networks(model_cfg, ssl_cfg, seed=0):
    rng = np.random.default_rng(seed)
    student = VitModel.initialize(model_cfg, rng)
    teacher = freeze(student.copy())
    decoder = SslDecoder.initialize(model_cfg, ssl_cfg.decoder_depth, rng)
    optimizer = Adam(trainable_arrays(student, decoder), lr=ssl_cfg.learning_rate)
    return student, teacher, decoder, optimizer


class TestMasking:
    """Test patch mask sampling."""

    def test_masked_count(self):
        """Test P' = round(ratio * P)."""
        assert masked_count(32, 0.75) == 24
        mask = sample_mask(32, 0.75, np.random.default_rng(0))
        assert mask.dtype == bool
        assert mask.sum() == 24

    def test_same_seed_same_mask(self):
        """Test determinism under a fixed generator."""
        a = sample_mask(32, 0.75, np.random.default_rng(4))
        b = sample_mask(32, 0.75, np.random.default_rng(4))

        np.testing.assert_array_equal(a, b)

    def test_uniform_marginals(self):
        """Test that every position is masked with frequency close to the ratio."""
        rng = np.random.default_rng(5)

        freq = np.mean([sample_mask(32, 0.75, rng) for _ in range(10000)], axis=0)

        np.testing.assert_allclose(freq, 0.75, atol=0.02)

    def test_nothing_masked_rejected(self):
        """Test that a ratio rounding to zero masked patches is rejected."""
        with pytest.raises(InvalidParameterError):
            sample_mask(2, 0.1, np.random.default_rng(0))

    def test_everything_masked_rejected(self):
        """Test that a ratio rounding to all patches is rejected."""
        with pytest.raises(InvalidParameterError):
            sample_mask(4, 0.9, np.random.default_rng(0))

    def test_block_masking_count(self):
        """Test that block masking hits the exact count on a grid."""
        for seed in range(10):
            mask = sample_mask(32, 0.5, np.random.default_rng(seed), MaskStrategy.BLOCK, grid=(4, 8))
            assert mask.sum() == 16

    def test_block_grid_mismatch(self):
        """Test that a grid not matching P is rejected."""
        with pytest.raises(InvalidParameterError):
            sample_mask(32, 0.5, np.random.default_rng(0), MaskStrategy.BLOCK, grid=(3, 8))

    def test_batch_masks(self, tiny_vit, ssl_config):
        """Test one independent mask per sample."""
        masks = sample_batch_masks(6, ssl_config, tiny_vit, np.random.default_rng(0))

        assert masks.shape == (6, 4)
        np.testing.assert_array_equal(masks.sum(axis=1), 2)


class TestEmaUpdate:
    """Test the teacher moving average."""

    def test_tau_one_keeps_teacher(self):
        """Test that tau 1 leaves the teacher unchanged."""
        teacher = {"w": np.array([1.0, 2.0])}

        ema_update(teacher, {"w": np.array([5.0, 6.0])}, 1.0)

        np.testing.assert_array_equal(teacher["w"], [1.0, 2.0])

    def test_tau_zero_copies_student(self):
        """Test that tau 0 copies the student."""
        teacher = {"w": np.array([1.0, 2.0])}

        ema_update(teacher, {"w": np.array([5.0, 6.0])}, 0.0)

        np.testing.assert_array_equal(teacher["w"], [5.0, 6.0])

    def test_geometric_decay(self):
        """Test n updates toward zero follow the same recurrence bitwise."""
        teacher = {"w": np.ones(3)}
        student = {"w": np.zeros(3)}
        expected = 1.0

        for _ in range(7):
            ema_update(teacher, student, 0.9)
            expected = expected * 0.9 + 0.1 * 0.0

        np.testing.assert_array_equal(teacher["w"], expected)

    def test_mismatched_names(self):
        """Test that differing parameter sets are rejected."""
        with pytest.raises(ShapeMismatchError):
            ema_update({"a": np.zeros(1)}, {"b": np.zeros(1)}, 0.5)


class TestSslLosses:
    """Test the global and local regression losses."""

    def test_zero_when_matching(self):
        """Test that perfect predictions give zero loss."""
        local = Tensor(np.ones((2, 3, 2, 4)))
        glob = Tensor(np.ones((2, 4)))

        losses = ssl_losses(SslBatchOutputs(x_s=local, f_t_local=local, c_s=glob, f_t_global=glob))

        assert [loss.item() for loss in losses] == [0.0, 0.0, 0.0]

    def test_global_half(self):
        """Test the mean over elements of the global error."""
        local = Tensor(np.zeros((1, 1, 1, 2)))

        l_global, l_local, l_total = ssl_losses(
            SslBatchOutputs(
                x_s=local,
                f_t_local=local,
                c_s=Tensor([[1.0, 0.0]]),
                f_t_global=Tensor([[0.0, 0.0]]),
            )
        )

        assert l_global.item() == pytest.approx(0.5)
        assert l_local.item() == 0.0
        assert l_total.item() == pytest.approx(0.5)

    def test_matches_float64_oracle(self):
        """Test weighted totals against a direct numpy computation."""
        rng = np.random.default_rng(6)
        arrays = [rng.normal(size=(2, 3, 2, 4)), rng.normal(size=(2, 3, 2, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))]

        with float64():
            tensors = [Tensor(a) for a in arrays]
            l_global, l_local, l_total = ssl_losses(SslBatchOutputs(*tensors), w_global=0.3, w_local=2.0)

        expected_local = np.mean((arrays[0] - arrays[1]) ** 2)
        expected_global = np.mean((arrays[2] - arrays[3]) ** 2)
        assert l_local.item() == pytest.approx(expected_local, abs=1e-10)
        assert l_global.item() == pytest.approx(expected_global, abs=1e-10)
        assert l_total.item() == pytest.approx(0.3 * expected_global + 2.0 * expected_local, abs=1e-10)

    def test_shape_mismatch(self):
        """Test that predictions and targets must align."""
        with pytest.raises(ShapeMismatchError):
            ssl_losses(
                SslBatchOutputs(
                    x_s=Tensor(np.zeros((1, 2, 1, 4))),
                    f_t_local=Tensor(np.zeros((1, 3, 1, 4))),
                    c_s=Tensor(np.zeros((1, 4))),
                    f_t_global=Tensor(np.zeros((1, 4))),
                )
            )


class TestPretrainStep:
    """Test one pretraining step."""

    def test_losses_and_decoder_shape(self, tiny_vit, ssl_config, patches):
        """Test that a step reports finite losses."""
        student, teacher, decoder, optimizer = _networks(tiny_vit, ssl_config)

        result = pretrain_step(student, teacher, decoder, patches[:4], ssl_config, np.random.default_rng(1), optimizer)

        assert np.isfinite(result.l_total)
        assert result.l_total == pytest.approx(result.l_global + result.l_local, rel=1e-5)
        assert result.tau == ssl_config.ema_tau

    def test_teacher_follows_student(self, tiny_vit, ssl_config, patches):
        """Test that the teacher becomes tau * old teacher + (1 - tau) * new student."""
        student, teacher, decoder, optimizer = _networks(tiny_vit, ssl_config)
        old_teacher = {k: v.copy() for k, v in teacher.state_dict().items()}

        pretrain_step(student, teacher, decoder, patches[:4], ssl_config, np.random.default_rng(1), optimizer)

        tau = ssl_config.ema_tau
        for name, old in old_teacher.items():
            expected = old.copy()
            expected *= tau
            expected += (1.0 - tau) * student.params[name].data
            np.testing.assert_array_equal(teacher.params[name].data, expected)

    def test_teacher_receives_no_gradient(self, tiny_vit, ssl_config, patches):
        """Test that the frozen teacher has no gradients after a step."""
        student, teacher, decoder, optimizer = _networks(tiny_vit, ssl_config)

        pretrain_step(student, teacher, decoder, patches[:4], ssl_config, np.random.default_rng(1), optimizer)

        assert all(t.grad is None and not t.requires_grad for t in teacher.params.values())

    def test_zero_learning_rate_keeps_student(self, tiny_vit, patches):
        """Test that lr 0 leaves the student untouched."""
        cfg = SslConfig(mask_ratio=0.5, learning_rate=0.0)
        student, teacher, decoder, optimizer = _networks(tiny_vit, cfg)
        before = {k: v.copy() for k, v in student.state_dict().items()}

        pretrain_step(student, teacher, decoder, patches[:4], cfg, np.random.default_rng(1), optimizer)

        for name, values in before.items():
            np.testing.assert_array_equal(student.params[name].data, values)

    def test_architecture_mismatch(self, tiny_vit, ssl_config, patches):
        """Test that student and teacher must share a config."""
        student, _, decoder, optimizer = _networks(tiny_vit, ssl_config)
        other = freeze(VitModel.initialize(tiny_vit.model_copy(update={"init_std": 0.05}), np.random.default_rng(0)))

        with pytest.raises(TrainingError):
            pretrain_step(student, other, decoder, patches[:4], ssl_config, np.random.default_rng(1), optimizer)

    @pytest.mark.slow
    def test_loss_decreases(self, tiny_vit):
        """Test that the objective drops on a fixed batch of predictable inputs."""
        cfg = SslConfig(mask_ratio=0.5, learning_rate=5e-3)
        student, teacher, decoder, optimizer = _networks(tiny_vit, cfg)
        rng = np.random.default_rng(2)
        levels = np.array([-1.5, -0.5, 0.5, 1.5])
        images = levels[:, None, None, None] * np.ones((4, 1, 16, 16)) + 0.05 * rng.normal(size=(4, 1, 16, 16))
        batch = patchify(images, tiny_vit.patch_size)

        losses = [
            pretrain_step(student, teacher, decoder, batch, cfg, rng, optimizer, step=step).l_total
            for step in range(50)
        ]

        assert np.mean(losses[-5:]) < losses[0]
        assert np.mean(losses[-5:]) < 0.9 * np.mean(losses[:5])


class TestSslConfig:
    """Test EMA annealing."""

    def test_constant_tau(self):
        """Test that tau stays fixed without an end value."""
        assert SslConfig(ema_tau=0.99).tau_at(500) == 0.99

    def test_linear_anneal(self):
        """Test linear interpolation up to the anneal horizon."""
        cfg = SslConfig(ema_tau=0.99, ema_tau_end=0.999, ema_anneal_steps=10)

        assert cfg.tau_at(0) == pytest.approx(0.99)
        assert cfg.tau_at(5) == pytest.approx(0.9945)
        assert cfg.tau_at(50) == pytest.approx(0.999)

    def test_tau_range(self):
        """Test that tau must lie in (0, 1]."""
        with pytest.raises(ValueError):
            SslConfig(ema_tau=0.0)


class TestPretrainer:
    """Test the pretraining loop and its checkpoints."""

    def test_run_writes_periodic_checkpoints(self, tiny_vit, patches, tmp_path):
        """Test step count, history and checkpoint files."""
        cfg = SslConfig(mask_ratio=0.5, steps=4, batch_size=3, learning_rate=1e-3, checkpoint_every=2)
        streams = RngStreams(3)
        trainer = Pretrainer(tiny_vit, cfg, streams.stream("init"))

        history = trainer.run(patches, streams.stream, checkpoint_dir=tmp_path)

        assert [r.step for r in history] == [0, 1, 2, 3]
        assert (tmp_path / "ssl_step000002.ckpt").exists()
        assert (tmp_path / "ssl_step000004.ckpt").exists()
        assert load_checkpoint(tmp_path / "ssl_step000004.ckpt").extra["step"] == 4

    def test_resume_continues_identically(self, tiny_vit, patches, ssl_config):
        """Test that a resumed run takes the same next step as the original."""
        streams = RngStreams(4)
        trainer = Pretrainer(tiny_vit, ssl_config, streams.stream("init"))
        trainer.step(patches[:4], streams.stream("ssl.mask", 0))
        trainer.step(patches[:4], streams.stream("ssl.mask", 1))

        resumed = Pretrainer.from_checkpoint(trainer.checkpoint(), np.random.default_rng(99))
        original_next = trainer.step(patches[4:], streams.stream("ssl.mask", 2))
        resumed_next = resumed.step(patches[4:], streams.stream("ssl.mask", 2))

        assert resumed.step_count == trainer.step_count == 3
        assert resumed_next.l_total == original_next.l_total
        for name, values in trainer.student.state_dict().items():
            np.testing.assert_array_equal(resumed.student.params[name].data, values)
        for name, values in trainer.teacher.state_dict().items():
            np.testing.assert_array_equal(resumed.teacher.params[name].data, values)

    def test_empty_set_rejected(self, tiny_vit, ssl_config):
        """Test that pretraining needs data."""
        trainer = Pretrainer(tiny_vit, ssl_config, np.random.default_rng(0))

        with pytest.raises(TrainingError):
            trainer.run(np.zeros((0, 4, 64)), RngStreams(0).stream)

    def test_final_step_logged_after_resume(self, tiny_vit, patches):
        """Test that the last step of a resumed run is logged at its global step."""
        cfg = SslConfig(mask_ratio=0.5, steps=4, batch_size=3, learning_rate=1e-3)
        streams = RngStreams(5)
        configure_logging(LogLevel.INFO)

        with capture_logs() as logs:
            trainer = Pretrainer(tiny_vit, cfg, streams.stream("init"))
            trainer.step_count = 12
            history = trainer.run(patches, streams.stream)

        logged = [entry["step"] for entry in logs if entry["event"] == "Pretraining step"]
        assert [r.step for r in history] == [12, 13, 14, 15]
        assert logged == [15]
