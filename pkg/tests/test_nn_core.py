import numpy as np
import pytest

from noduledet.nn import (
    GraphError,
    Tensor,
    add,
    backward,
    batch_norm2d,
    checkpoint,
    concat_channels,
    conv2d,
    maxpool2d,
    mul,
    precision,
    scale,
    silu,
    split_channels,
    sum_all,
    upsample_nearest2x,
)

from gradcheck import REL_TOL, all_indices, finite_difference, rel_error


def conv2d_naive(x, w, b, stride, pad):
    """Direct loop-over-kernel cross-correlation in float64."""
    x = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = x[:, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
            out[:, :, i, j] = np.einsum("nchw,kchw->nk", patch, w.astype(np.float64))
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out


def projected(op_out: Tensor, r: np.ndarray) -> Tensor:
    return sum_all(mul(op_out, Tensor(r)))


def check_op_gradients(build, inputs, rng, indices=None):
    """Compare backward() of sum(op(inputs) * r) against central differences, every element."""
    leaves = [Tensor(a, requires_grad=True) for a in inputs]
    out = build(*leaves)
    r = rng.standard_normal(out.shape).astype(np.float32)
    backward(projected(out, r))
    # The oracle re-evaluates the op in float64 at the same (float32-exact)
    # inputs, so float32 output rounding does not swamp the difference quotient.
    arrays = [leaf.data.astype(np.float64) for leaf in leaves]

    def f():
        with precision(np.float64):
            y = build(*[Tensor(a) for a in arrays])
        return float(np.sum(y.data * r))

    worst = 0.0
    for arr, leaf in zip(arrays, leaves):
        idx = indices or all_indices(arr.shape)
        fd = finite_difference(f, arr, idx)
        analytic = np.array([leaf.grad[i] for i in idx])
        worst = max(worst, float(rel_error(analytic, fd).max()))
    return worst


class TestConv2d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((1, 1, 3, 3)).astype(np.float32)
        y = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
        assert np.array_equal(y.data, x)

    def test_all_ones_3x3(self):
        y = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), pad=1).data[0, 0]
        assert y[1, 1] == 9.0
        assert y[0, 0] == y[0, 2] == y[2, 0] == y[2, 2] == 4.0
        assert y[0, 1] == y[1, 0] == y[1, 2] == y[2, 1] == 6.0

    def test_output_shape(self):
        x = Tensor(np.zeros((1, 3, 416, 416)))
        w = Tensor(np.zeros((16, 3, 3, 3)))
        assert conv2d(x, w, stride=2, pad=1).shape == (1, 16, 208, 208)

    @pytest.mark.parametrize("k,stride,pad", [(1, 1, 0), (1, 2, 0), (3, 1, 1), (3, 2, 1), (5, 1, 2), (2, 2, 0)])
    def test_matches_naive(self, k, stride, pad):
        rng = np.random.default_rng(k * 10 + stride + pad)
        x = rng.standard_normal((2, 5, 11, 9)).astype(np.float32)
        w = rng.standard_normal((4, 5, k, k)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        fast = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
        np.testing.assert_allclose(fast, conv2d_naive(x, w, b, stride, pad), atol=1e-5, rtol=0)

    def test_channel_mismatch_names_shapes(self):
        with pytest.raises(ValueError, match=r"\(1, 2, 4, 4\).*\(3, 3, 3, 3\)"):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 3, 3, 3))))

    def test_empty_output_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


class TestBatchNorm:
    def test_eval_centered_constant(self):
        x = np.full((2, 3, 4, 4), 2.5, dtype=np.float32)
        rm, rv = np.full(3, 2.5, dtype=np.float32), np.ones(3, dtype=np.float32)
        y = batch_norm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=False)
        np.testing.assert_allclose(y.data, 0.0, atol=1e-6)

    def test_training_statistics(self):
        x = np.random.default_rng(1).normal(3.0, 2.0, (4, 3, 5, 5)).astype(np.float32)
        rm, rv = np.zeros(3, np.float32), np.ones(3, np.float32)
        y = batch_norm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=True).data
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-4)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-2)

    def test_running_update(self):
        x = np.random.default_rng(2).normal(1.0, 1.0, (2, 2, 4, 4)).astype(np.float32)
        rm, rv = np.zeros(2, np.float32), np.ones(2, np.float32)
        batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, momentum=0.03, training=True)
        np.testing.assert_allclose(rm, 0.03 * x.mean(axis=(0, 2, 3)), rtol=1e-5)
        np.testing.assert_allclose(rv, 0.97 + 0.03 * x.var(axis=(0, 2, 3)), rtol=1e-5)

    def test_beta_gradient_counts_elements(self):
        x = np.random.default_rng(3).standard_normal((2, 3, 4, 5)).astype(np.float32)
        beta = Tensor(np.zeros(3), requires_grad=True)
        y = batch_norm2d(Tensor(x), Tensor(np.ones(3)), beta, np.zeros(3, np.float32), np.ones(3, np.float32), training=True)
        backward(sum_all(y))
        np.testing.assert_array_equal(beta.grad, np.full(3, 2 * 4 * 5))

    def test_single_value_per_channel_rejected(self):
        with pytest.raises(ValueError, match="N\\*H\\*W"):
            batch_norm2d(Tensor(np.zeros((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                         np.zeros(2, np.float32), np.ones(2, np.float32), training=True)


class TestElementwiseAndShapeOps:
    def test_silu_values(self):
        y = silu(Tensor(np.array([0.0, 1.0, 20.0]))).data
        assert y[0] == 0.0
        assert abs(y[1] - 0.73106) < 1e-4
        assert abs(y[2] - 20.0) < 1e-6

    def test_maxpool_identity_and_max(self):
        x = np.random.default_rng(4).standard_normal((1, 2, 5, 5)).astype(np.float32)
        assert np.array_equal(maxpool2d(Tensor(x), 1, 1, 0).data, x)
        y = maxpool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), 2, 1, 0)
        assert y.shape == (1, 1, 1, 1) and y.data.item() == 4.0

    def test_maxpool_spp_shape(self):
        assert maxpool2d(Tensor(np.zeros((1, 8, 13, 13))), 5, 1, 2).shape == (1, 8, 13, 13)

    def test_maxpool_tie_goes_to_first(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        backward(sum_all(maxpool2d(x, 2, 1, 0)))
        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_maxpool_window_too_large(self):
        with pytest.raises(ValueError, match="larger"):
            maxpool2d(Tensor(np.zeros((1, 1, 3, 3))), 5, 1, 0)

    def test_upsample(self):
        y = upsample_nearest2x(Tensor(np.full((1, 1, 1, 1), 7.0)))
        np.testing.assert_array_equal(y.data, np.full((1, 1, 2, 2), 7.0))
        assert upsample_nearest2x(Tensor(np.zeros((1, 4, 13, 13)))).shape == (1, 4, 26, 26)
        x = Tensor(np.zeros((1, 2, 3, 3)), requires_grad=True)
        backward(sum_all(upsample_nearest2x(x)))
        np.testing.assert_array_equal(x.grad, np.full((1, 2, 3, 3), 4.0))

    def test_concat(self):
        a = Tensor(np.random.default_rng(5).standard_normal((1, 3, 4, 4)), requires_grad=True)
        b = Tensor(np.random.default_rng(6).standard_normal((1, 5, 4, 4)), requires_grad=True)
        assert concat_channels([a]) is a
        y = concat_channels([a, b])
        assert y.shape == (1, 8, 4, 4)
        r = np.random.default_rng(7).standard_normal(y.shape).astype(np.float32)
        backward(projected(y, r))
        np.testing.assert_array_equal(a.grad, r[:, :3])
        np.testing.assert_array_equal(b.grad, r[:, 3:])

    def test_concat_split_roundtrip_exact(self):
        xs = [Tensor(np.random.default_rng(i).standard_normal((2, c, 3, 3))) for i, c in enumerate((1, 4, 2))]
        parts = split_channels(concat_channels(xs), [1, 4, 2])
        for x, p in zip(xs, parts):
            assert np.array_equal(x.data, p.data)

    def test_concat_spatial_mismatch_names_index(self):
        with pytest.raises(ValueError, match="input 1"):
            concat_channels([Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 4, 5)))])


class TestPrecision:
    def test_default_float32(self):
        assert Tensor(np.zeros(2, np.float64)).data.dtype == np.float32

    def test_context_restores(self):
        with precision(np.float64):
            assert Tensor(np.zeros(2)).data.dtype == np.float64
            assert silu(Tensor(np.ones(2))).data.dtype == np.float64
        assert Tensor(np.zeros(2)).data.dtype == np.float32

    def test_restores_after_error(self):
        with pytest.raises(RuntimeError):
            with precision(np.float64):
                raise RuntimeError
        assert Tensor(np.zeros(2)).data.dtype == np.float32


class TestBackward:
    def test_linear(self):
        x = np.random.default_rng(8).standard_normal((2, 3)).astype(np.float32)
        w = Tensor(np.ones((2, 3)), requires_grad=True)
        backward(sum_all(mul(w, Tensor(x))))
        np.testing.assert_array_equal(w.grad, x)

    def test_non_scalar_rejected(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(GraphError, match="scalar"):
            backward(mul(w, w))

    def test_twice_rejected(self):
        w = Tensor(np.ones(3), requires_grad=True)
        loss = sum_all(mul(w, w))
        backward(loss)
        with pytest.raises(GraphError, match="consumed"):
            backward(loss)

    def test_accumulates(self):
        w = Tensor(np.ones(3), requires_grad=True)
        backward(sum_all(w))
        backward(sum_all(w))
        np.testing.assert_array_equal(w.grad, np.full(3, 2.0))

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        grads = []
        for _ in range(2):
            wt = Tensor(w, requires_grad=True)
            y = silu(conv2d(Tensor(x), wt, None, 2, 1))
            backward(sum_all(maxpool2d(y, 3, 1, 1)))
            grads.append(wt.grad.copy())
        assert np.array_equal(grads[0].view(np.uint32), grads[1].view(np.uint32))


class TestFiniteDifferences:
    """Every differentiable op against central differences (h=1e-3, rel err < 1e-2)."""

    def test_conv2d(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 2, 5, 5)).astype(np.float32)
        w = (0.5 * rng.standard_normal((3, 2, 3, 3))).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        worst = check_op_gradients(lambda x, w, b: conv2d(x, w, b, 2, 1), [x, w, b], rng)
        assert worst < REL_TOL

    def test_conv2d_pointwise_strided(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((1, 3, 5, 5)).astype(np.float32)
        w = rng.standard_normal((2, 3, 1, 1)).astype(np.float32)
        assert check_op_gradients(lambda x, w: conv2d(x, w, None, 2, 0), [x, w], rng) < REL_TOL

    @pytest.mark.parametrize("training", [True, False])
    def test_batch_norm(self, training):
        rng = np.random.default_rng(12)
        x = rng.normal(0.5, 1.5, (2, 2, 3, 3)).astype(np.float32)
        gamma = rng.uniform(0.5, 1.5, 2).astype(np.float32)
        beta = rng.standard_normal(2).astype(np.float32)
        rm, rv = rng.standard_normal(2).astype(np.float32), rng.uniform(0.5, 2, 2).astype(np.float32)

        def build(x, g, b):
            return batch_norm2d(x, g, b, rm.astype(x.data.dtype), rv.astype(x.data.dtype), training=training)

        assert check_op_gradients(build, [x, gamma, beta], rng) < REL_TOL

    def test_silu(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(-4, 4, (2, 3, 4)).astype(np.float32)
        assert check_op_gradients(silu, [x], rng) < REL_TOL

    def test_maxpool(self):
        rng = np.random.default_rng(14)
        # well-separated values so +-h never changes a window's argmax
        x = (rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.05).astype(np.float32)
        assert check_op_gradients(lambda t: maxpool2d(t, 3, 2, 1), [x], rng) < REL_TOL
        assert check_op_gradients(lambda t: maxpool2d(t, 5, 1, 2), [x], rng) < REL_TOL

    def test_upsample(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        assert check_op_gradients(upsample_nearest2x, [x], rng) < REL_TOL

    def test_concat_and_add(self):
        rng = np.random.default_rng(16)
        a = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        b = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        assert check_op_gradients(lambda a, b: concat_channels([a, b]), [a, b], rng) < REL_TOL
        assert check_op_gradients(add, [a, b], rng) < REL_TOL

    def test_scale(self):
        rng = np.random.default_rng(18)
        x = rng.standard_normal((2, 3)).astype(np.float32)
        assert check_op_gradients(lambda t: scale(t, 8.0), [x], rng) < REL_TOL
        assert np.array_equal(scale(Tensor(x), 8.0).data, x * np.float32(8))

    def test_composite_block(self):
        """conv -> bn -> silu -> residual add, the repeated unit of the network."""
        rng = np.random.default_rng(17)
        x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
        w = (0.4 * rng.standard_normal((3, 3, 3, 3))).astype(np.float32)
        g = np.ones(3, np.float32)
        b = np.zeros(3, np.float32)

        def build(x, w, g, b):
            y = batch_norm2d(conv2d(x, w, None, 1, 1), g, b, np.zeros(3, np.float32), np.ones(3, np.float32), training=True)
            return add(x, silu(y))

        assert check_op_gradients(build, [x, w, g, b], rng) < REL_TOL


class TestCheckpoint:
    def test_layout_bytes(self):
        blob = checkpoint.dumps({"b": np.array([1.0], np.float32), "a": np.zeros((2, 1), np.float32)})
        expected = (
            b"NDCK" + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
            + (1).to_bytes(2, "little") + b"a" + bytes([2]) + (2).to_bytes(4, "little") + (1).to_bytes(4, "little")
            + np.zeros(2, "<f4").tobytes()
            + (1).to_bytes(2, "little") + b"b" + bytes([1]) + (1).to_bytes(4, "little")
            + np.array([1.0], "<f4").tobytes()
        )
        assert blob == expected

    def test_roundtrip(self):
        rng = np.random.default_rng(18)
        arrays = {"x.weight": rng.standard_normal((3, 2, 1, 1)).astype(np.float32), "y": np.float32([4.5])}
        back = checkpoint.loads(checkpoint.dumps(arrays))
        assert list(back) == sorted(arrays)
        for k in arrays:
            assert np.array_equal(back[k], arrays[k])

    @pytest.mark.parametrize("blob", [b"XXXX", b"NDCK\x02\x00\x00\x00\x00\x00\x00\x00", b"NDCK\x01\x00\x00\x00\x01\x00\x00\x00\x05"])
    def test_corrupt(self, blob):
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.loads(blob)
