"""Tests for the reverse-mode differentiation engine."""

import numpy as np
import pytest

from coughkit.nn.autodiff import (
    Tensor,
    checked_mode,
    concat,
    finite_diff_grad,
    float64,
    gather_rows,
    gelu,
    layer_norm,
    log_softmax,
    mean,
    no_grad,
    repeat,
    softmax,
    tensor_sum,
)
from coughkit.nn.vit import VitModel
from coughkit.exceptions import InvalidParameterError, NonFiniteError, ShapeMismatchError


def _assert_grad_matches(f, theta: Tensor, rtol: float = 1e-6, atol: float = 1e-8) -> None:
    """Compare backward() against central differences for a scalar function of theta."""
    theta.zero_grad()
    f(theta).backward()
    numeric = finite_diff_grad(f, theta)
    np.testing.assert_allclose(theta.grad, numeric.data, rtol=rtol, atol=atol)


class TestForward:
    """Test forward values of the primitive ops."""

    def test_softmax_uniform(self):
        """Test that equal logits give equal probabilities."""
        np.testing.assert_allclose(softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_softmax_large_logits(self):
        """Test that large logits do not overflow."""
        out = softmax(Tensor([[1000.0, 1000.0, 0.0]]))

        assert np.all(np.isfinite(out.data))
        assert out.data.sum() == pytest.approx(1.0, abs=1e-6)

    def test_log_softmax_matches_log_of_softmax(self):
        """Test log_softmax against log(softmax)."""
        with float64():
            x = Tensor(np.random.default_rng(0).normal(size=(3, 5)))
            np.testing.assert_allclose(log_softmax(x).data, np.log(softmax(x).data), atol=1e-12)

    def test_layer_norm_of_constant(self):
        """Test that a constant row normalizes to zeros."""
        np.testing.assert_allclose(layer_norm(Tensor(np.full((2, 8), 5.0))).data, 0.0, atol=1e-6)

    def test_layer_norm_moments(self):
        """Test zero mean and unit variance along the last axis."""
        with float64():
            x = Tensor(np.random.default_rng(1).normal(3.0, 2.0, size=(4, 32)))
            out = layer_norm(x, eps=0.0).data

        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-12)

    def test_gelu_reference_values(self):
        """Test exact GELU at a few points."""
        with float64():
            out = gelu(Tensor([0.0, 1.0, -1.0])).data

        np.testing.assert_allclose(out, [0.0, 0.8413447460685429, -0.15865525393145707], atol=1e-12)

    def test_matmul_matches_loops(self):
        """Test a batched product against explicit loops."""
        rng = np.random.default_rng(2)
        with float64():
            a = Tensor(rng.normal(size=(2, 3, 4)))
            w = Tensor(rng.normal(size=(4, 5)))
            out = (a @ w).data

        for b in range(2):
            for i in range(3):
                for j in range(5):
                    assert out[b, i, j] == pytest.approx(sum(a.data[b, i, k] * w.data[k, j] for k in range(4)), abs=1e-12)

    def test_dtype_defaults_to_float32(self):
        """Test that tensors are float32 unless float64() is active."""
        assert Tensor([1.0]).data.dtype == np.float32
        with float64():
            assert Tensor([1.0]).data.dtype == np.float64


class TestShapes:
    """Test shape checking."""

    def test_add_incompatible(self):
        """Test that non-suffix shapes are rejected."""
        with pytest.raises(ShapeMismatchError):
            Tensor(np.ones(3)) + Tensor(np.ones(4))

    def test_add_suffix_broadcast(self):
        """Test that a bias row broadcasts over leading axes."""
        out = Tensor(np.ones((2, 3))) + Tensor(np.array([1.0, 2.0, 3.0]))

        np.testing.assert_allclose(out.data, [[2.0, 3.0, 4.0], [2.0, 3.0, 4.0]])

    def test_matmul_inner_mismatch(self):
        """Test that mismatched inner dimensions are rejected."""
        with pytest.raises(ShapeMismatchError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))

    def test_reshape_size_mismatch(self):
        """Test that reshaping to a different size is rejected."""
        with pytest.raises(ShapeMismatchError):
            Tensor(np.ones(6)).reshape(4, 2)

    def test_repeat_needs_unit_axis(self):
        """Test that only size-1 axes can be repeated."""
        with pytest.raises(ShapeMismatchError):
            repeat(Tensor(np.ones((2, 3))), 4, axis=0)

    def test_gather_rows(self):
        """Test per-sample row selection."""
        x = Tensor(np.arange(2 * 4 * 3, dtype=np.float64).reshape(2, 4, 3))

        out = gather_rows(x, np.array([[0, 2], [1, 3]]))

        np.testing.assert_array_equal(out.data[0], x.data[0, [0, 2]])
        np.testing.assert_array_equal(out.data[1], x.data[1, [1, 3]])


class TestBackward:
    """Test gradient accumulation."""

    def test_sum_gradient_is_ones(self):
        """Test that d(sum x)/dx is one everywhere."""
        x = Tensor(np.ones((2, 3)), requires_grad=True)

        tensor_sum(x).backward()

        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_gradient(self):
        """Test that d(sum w^2)/dw = 2w."""
        w = Tensor([1.0, 2.0], requires_grad=True)

        tensor_sum(w * w).backward()

        np.testing.assert_allclose(w.grad, [2.0, 4.0])

    def test_gradients_accumulate(self):
        """Test that two backward passes add up."""
        w = Tensor([1.0, 2.0], requires_grad=True)

        tensor_sum(w * w).backward()
        tensor_sum(w * w).backward()

        np.testing.assert_allclose(w.grad, [4.0, 8.0])

    def test_unreachable_parameter_has_zero_grad(self):
        """Test that parameters outside the graph keep a zero gradient."""
        used = Tensor([1.0], requires_grad=True)
        unused = Tensor([5.0], requires_grad=True)

        tensor_sum(used * 3.0).backward()

        np.testing.assert_array_equal(unused.grad, [0.0])

    def test_non_scalar_loss_rejected(self):
        """Test that backward needs a scalar."""
        with pytest.raises(InvalidParameterError):
            (Tensor([1.0, 2.0], requires_grad=True) * 2.0).backward()

    def test_loss_without_graph_rejected(self):
        """Test that a constant loss cannot be differentiated."""
        with pytest.raises(InvalidParameterError):
            tensor_sum(Tensor([1.0, 2.0])).backward()

    def test_no_grad_records_nothing(self):
        """Test that ops inside no_grad do not require grad."""
        w = Tensor([1.0], requires_grad=True)

        with no_grad():
            out = w * 2.0

        assert not out.requires_grad

    def test_finite_diff_on_square(self):
        """Test central differences on w^2 at 3."""
        with float64():
            w = Tensor([3.0], requires_grad=True)
            numeric = finite_diff_grad(lambda t: tensor_sum(t * t), w)

        assert numeric.data[0] == pytest.approx(6.0, abs=1e-6)


class TestCheckedMode:
    """Test non-finite detection."""

    def test_overflow_raises(self):
        """Test that an overflow raises inside checked mode."""
        with float64(), checked_mode(), np.errstate(over="ignore"):
            with pytest.raises(NonFiniteError):
                Tensor([1e308]) * 10.0

    def test_unchecked_overflow_passes(self):
        """Test that the same overflow is silent outside checked mode."""
        with float64(), np.errstate(over="ignore"):
            out = Tensor([1e308]) * 10.0

        assert np.isinf(out.data[0])


class TestGradientCheck:
    """Compare analytic gradients with central differences in float64."""

    @pytest.fixture
    def rng(self):
        """Seeded generator."""
        return np.random.default_rng(11)

    def test_softmax_and_log_softmax(self, rng):
        """Test softmax and log_softmax gradients."""
        with float64():
            x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            weights = Tensor(rng.normal(size=(3, 4)))
            _assert_grad_matches(lambda t: tensor_sum(softmax(t) * weights), x)
            _assert_grad_matches(lambda t: tensor_sum(log_softmax(t) * weights), x)

    def test_layer_norm(self, rng):
        """Test layer norm gradients for input, gain and shift."""
        with float64():
            x = Tensor(rng.normal(size=(2, 3, 6)), requires_grad=True)
            gamma = Tensor(rng.normal(size=6), requires_grad=True)
            beta = Tensor(rng.normal(size=6), requires_grad=True)
            weights = Tensor(rng.normal(size=(2, 3, 6)))

            def loss(_: Tensor) -> Tensor:
                return tensor_sum(layer_norm(x, gamma, beta) * weights)

            for theta in (x, gamma, beta):
                _assert_grad_matches(loss, theta)

    def test_gelu_matmul_mean(self, rng):
        """Test a small two-layer composition."""
        with float64():
            x = Tensor(rng.normal(size=(5, 3)))
            w1 = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            w2 = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

            def loss(_: Tensor) -> Tensor:
                return mean(gelu(x @ w1) @ w2)

            _assert_grad_matches(loss, w1)
            _assert_grad_matches(loss, w2)

    def test_indexing_and_concat(self, rng):
        """Test getitem, concat, repeat and gather_rows gradients."""
        with float64():
            a = Tensor(rng.normal(size=(1, 1, 3)), requires_grad=True)
            b = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
            weights = Tensor(rng.normal(size=(2, 3, 3)))
            index = np.array([[0, 3], [2, 2]])

            def loss(_: Tensor) -> Tensor:
                joined = concat([repeat(a, 2, axis=0), gather_rows(b, index)], axis=1)
                return tensor_sum(joined * weights) + tensor_sum(b[:, 1, :])

            _assert_grad_matches(loss, a)
            _assert_grad_matches(loss, b)

    def test_vit_forward(self, tiny_vit, rng):
        """Test gradients through a whole two-block model."""
        with float64():
            model = VitModel.initialize(tiny_vit.model_copy(update={"init_std": 0.5}), rng)
            patches = Tensor(rng.normal(size=(2, tiny_vit.n_patches, tiny_vit.patch_dim)))
            weights = Tensor(rng.normal(size=(2, tiny_vit.n_classes)))
            rep_weights = Tensor(rng.normal(size=(2, tiny_vit.n_patches, tiny_vit.embed_dim)))

            def loss(_: Tensor) -> Tensor:
                trace = model.forward(patches)
                return tensor_sum(trace.logits * weights) + tensor_sum(trace.patch_reps_per_block[0] * rep_weights)

            for name in (
                "head.weight",
                "norm.bias",
                "cls_token",
                "pos_embed",
                "patch_embed.bias",
                "blocks.0.norm1.weight",
                "blocks.0.attn.proj.bias",
                "blocks.1.attn.qkv.bias",
                "blocks.1.mlp.fc1.bias",
                "blocks.1.mlp.fc2.bias",
            ):
                model.zero_grad()
                _assert_grad_matches(loss, model.params[name], rtol=1e-4, atol=1e-7)
