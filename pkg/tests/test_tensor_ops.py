"""Autodiff tensor, primitive ops and the gradient checker."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdnet import ops
from cpdnet.gradcheck import finite_diff_check, relative_error
from cpdnet.nn import BatchNorm2d
from cpdnet.tensor import Parameter, Tensor, no_grad


def naive_conv(x, w, stride=1, padding=0, dilation=1):
    """Triple-loop cross-correlation used as an oracle."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, ic, i * stride + u * dilation, j * stride + v * dilation] * w[oc, ic, u, v]
                    out[b, oc, i, j] = acc
    return out


class TestTensor:
    def test_add_mul_backward(self):
        a = Parameter(np.array([1.0, 2.0]))
        b = Parameter(np.array([3.0, 4.0]))
        (a * b + a).sum().backward()
        np.testing.assert_allclose(a.grad, [4.0, 5.0])
        np.testing.assert_allclose(b.grad, [1.0, 2.0])

    def test_shared_subexpression_accumulates(self):
        a = Parameter(np.array([3.0]))
        y = a * a
        (y + y).sum().backward()
        np.testing.assert_allclose(a.grad, [12.0])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))

    def test_scalar_broadcast(self):
        a = Parameter(np.ones((2, 2)))
        (a * 3.0).sum().backward()
        np.testing.assert_allclose(a.grad, np.full((2, 2), 3.0))

    def test_no_grad_builds_no_graph(self):
        a = Parameter(np.ones(3))
        with no_grad():
            y = a * 2.0
        assert not y.requires_grad

    def test_default_dtype_float32(self):
        assert Parameter(np.ones(2)).dtype == np.float32
        assert Tensor(np.ones(2, dtype=np.float64)).dtype == np.float64


class TestConv2d:
    def test_zero_input(self, rng):
        x = Tensor(np.zeros((1, 1, 3, 3), dtype=np.float32))
        w = Tensor(rng.standard_normal((1, 1, 3, 3)).astype(np.float32))
        out = ops.conv2d(x, w, padding=0)
        assert out.shape == (1, 1, 1, 1)
        assert out.data.item() == 0.0

    def test_identity_kernel(self):
        x = np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1
        out = ops.conv2d(Tensor(x), Tensor(w), padding=1)
        np.testing.assert_array_equal(out.data, x)

    def test_dilated_matches_triple_loop(self, rng):
        x = rng.standard_normal((1, 1, 5, 5))
        w = rng.standard_normal((1, 1, 3, 3))
        out = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), padding=2, dilation=2)
        np.testing.assert_allclose(out.data, naive_conv(x, w, padding=2, dilation=2), atol=1e-6)

    @pytest.mark.parametrize("stride,padding,dilation", [(1, 1, 1), (2, 1, 1), (1, 0, 1), (2, 3, 3)])
    def test_multichannel_matches_triple_loop(self, rng, stride, padding, dilation):
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        out = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                         stride=stride, padding=padding, dilation=dilation)
        np.testing.assert_allclose(out.data, naive_conv(x, w, stride, padding, dilation), atol=1e-10)

    def test_depthwise_matches_per_channel(self, rng):
        x = rng.standard_normal((1, 3, 9, 9))
        w = rng.standard_normal((3, 1, 7, 7))
        out = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), padding=3, groups=3)
        for c in range(3):
            want = naive_conv(x[:, c:c + 1], w[c:c + 1], padding=3)
            np.testing.assert_allclose(out.data[:, c:c + 1], want, atol=1e-10)

    def test_weight_shape_error_names_dimension(self, rng):
        x = Tensor(np.zeros((1, 3, 4, 4), dtype=np.float32))
        w = Tensor(np.zeros((2, 5, 3, 3), dtype=np.float32))
        spec = ops.ConvSpec(3, 2, (3, 3), 1, 1, 1, 1, "zeros")
        with pytest.raises(ValueError, match="in_channels"):
            ops.conv2d(x, w, None, spec)

    @pytest.mark.parametrize("mode,groups", [("zeros", 1), ("replicate", 1), ("zeros", 2)])
    def test_gradients(self, rng, mode, groups):
        x = Parameter(rng.standard_normal((2, 4, 5, 5)), dtype=np.float64)
        w = Parameter(rng.standard_normal((4, 4 // groups, 3, 3)), dtype=np.float64)
        b = Parameter(rng.standard_normal(4), dtype=np.float64)
        probe = rng.standard_normal((2, 4, 5, 5))

        def loss():
            out = ops.conv2d(x, w, b, padding=1, groups=groups, padding_mode=mode)
            return ops.sum(ops.mul(out, Tensor(probe)))

        report = finite_diff_check(loss, [x, w, b], epsilon=1e-4)
        assert report.max_error < 1e-6


class TestActivations:
    def test_relu(self):
        out = ops.relu(Tensor(np.array([-1.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 2.0])

    def test_sigmoid_zero(self):
        assert ops.sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5

    def test_sigmoid_extremes_finite(self):
        out = ops.sigmoid(Tensor(np.array([-1000.0, 1000.0])))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [0.0, 1.0])

    def test_gelu_zero(self):
        assert ops.gelu(Tensor(np.array([0.0]))).data[0] == 0.0

    def test_gelu_derivative_matches_finite_difference(self):
        xs = np.array([-2.0, -1.0, 0.5, 3.0])
        p = Parameter(xs, dtype=np.float64)
        ops.sum(ops.gelu(p)).backward()
        h = 1e-5
        fd = (ops.gelu(Tensor(xs + h)).data - ops.gelu(Tensor(xs - h)).data) / (2 * h)
        np.testing.assert_allclose(p.grad, fd, rtol=1e-3)

    def test_elementwise_dispatch(self):
        x = Tensor(np.array([-1.0, 1.0]))
        np.testing.assert_array_equal(ops.elementwise("relu", x).data, [0.0, 1.0])
        with pytest.raises(ValueError):
            ops.elementwise("tanhh", x)


class TestBatchNorm:
    def test_normalizes_moments(self, rng):
        x = rng.normal(5.0, 2.0, (4, 3, 8, 8))
        bn = BatchNorm2d(3)
        bn.train()
        out = bn(Tensor(x, dtype=np.float64)).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-4)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_affine(self, rng):
        x = rng.standard_normal((4, 2, 8, 8))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        bn = BatchNorm2d(2)
        bn.weight.data = np.full(2, 2.0, dtype=np.float32)
        bn.bias.data = np.full(2, 3.0, dtype=np.float32)
        out = bn(Tensor(x, dtype=np.float64)).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 3.0, atol=1e-4)
        np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 2.0, atol=1e-4)

    def test_gradient(self, rng):
        x = Parameter(rng.standard_normal((2, 3, 4, 4)), dtype=np.float64)
        g = Parameter(rng.uniform(0.5, 1.5, 3), dtype=np.float64)
        b = Parameter(rng.standard_normal(3), dtype=np.float64)
        probe = Tensor(rng.standard_normal((2, 3, 4, 4)))

        def loss():
            out = ops.batch_norm(x, g, b, np.zeros(3), np.ones(3), training=True)
            return ops.sum(ops.mul(out, probe))

        assert finite_diff_check(loss, [x, g, b], epsilon=1e-4).max_error < 1e-3

    def test_eval_uses_running_stats(self, rng):
        bn = BatchNorm2d(2)
        bn.train()
        bn(Tensor(rng.normal(3.0, 1.0, (8, 2, 4, 4))))
        bn.eval()
        x = Tensor(np.zeros((1, 2, 2, 2), dtype=np.float32))
        out = bn(x).data
        assert np.all(out < 0)

    def test_zero_batch_rejected(self):
        with pytest.raises(ValueError):
            ops.batch_norm(Tensor(np.zeros((0, 2, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                           np.zeros(2), np.ones(2), training=True)


class TestUpsample:
    def test_factor_one_identity(self, rng):
        x = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        np.testing.assert_array_equal(ops.upsample_bilinear(Tensor(x), 1).data, x)

    def test_constant(self):
        out = ops.upsample_bilinear(Tensor(np.full((1, 1, 3, 4), 2.5)), 2)
        np.testing.assert_allclose(out.data, 2.5)
        assert out.shape == (1, 1, 6, 8)

    def test_matches_per_pixel_formula(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ops.upsample_bilinear(Tensor(x[None, None], dtype=np.float64), 2).data[0, 0]

        def sample(i, j):
            sy = min(max((i + 0.5) / 2 - 0.5, 0.0), 1.0)
            sx = min(max((j + 0.5) / 2 - 0.5, 0.0), 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, 1), min(x0 + 1, 1)
            fy, fx = sy - y0, sx - x0
            return ((1 - fy) * (1 - fx) * x[y0, x0] + (1 - fy) * fx * x[y0, x1]
                    + fy * (1 - fx) * x[y1, x0] + fy * fx * x[y1, x1])

        want = np.array([[sample(i, j) for j in range(4)] for i in range(4)])
        np.testing.assert_allclose(out, want, atol=1e-12)

    def test_gradient(self, rng):
        x = Parameter(rng.standard_normal((1, 2, 3, 4)), dtype=np.float64)
        probe = Tensor(rng.standard_normal((1, 2, 6, 8)))
        report = finite_diff_check(lambda: ops.sum(ops.mul(ops.upsample_bilinear(x, 2), probe)), [x], 1e-4)
        assert report.max_error < 1e-8

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            ops.upsample_bilinear(Tensor(np.zeros((1, 1, 2, 2))), 0)


class TestConcatPool:
    def test_single_identity(self, rng):
        x = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        np.testing.assert_array_equal(ops.concat_channels([Tensor(x)]).data, x)

    def test_order(self):
        a = Tensor(np.array([1.0, 2.0]).reshape(1, 2, 1, 1))
        b = Tensor(np.array([3.0, 4.0]).reshape(1, 2, 1, 1))
        np.testing.assert_array_equal(ops.concat_channels([a, b]).data.ravel(), [1, 2, 3, 4])

    def test_concat_grad_ones(self):
        a = Parameter(np.zeros((1, 2, 2, 2)))
        b = Parameter(np.zeros((1, 3, 2, 2)))
        ops.sum(ops.concat_channels([a, b])).backward()
        np.testing.assert_array_equal(a.grad, np.ones(a.shape))
        np.testing.assert_array_equal(b.grad, np.ones(b.shape))

    def test_concat_mismatch(self):
        with pytest.raises(ValueError):
            ops.concat_channels([Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 2)))])

    def test_pool_constant(self):
        out = ops.global_avg_pool(Tensor(np.full((1, 2, 3, 3), 7.0)))
        np.testing.assert_allclose(out.data, 7.0)

    def test_pool_mean(self):
        out = ops.global_avg_pool(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None]))
        assert out.data.item() == 2.5

    def test_pool_gradient(self, rng):
        x = Parameter(rng.standard_normal((2, 3, 4, 4)), dtype=np.float64)
        probe = Tensor(rng.standard_normal((2, 3, 1, 1)))
        report = finite_diff_check(lambda: ops.sum(ops.mul(ops.global_avg_pool(x), probe)), [x], 1e-4)
        assert report.max_error < 1e-4


class TestGradCheck:
    def test_linear_exact(self):
        # float32 differences carry ~1e-5 rounding at this epsilon
        p = Parameter(np.array([0.3, -0.2, 1.5]), dtype=np.float64)
        report = finite_diff_check(lambda: ops.sum(p), [p], epsilon=1e-3)
        np.testing.assert_array_equal(p.grad, np.ones(3))
        assert report.max_error < 1e-6

    def test_quadratic(self):
        v = np.array([0.5, -1.0, 2.0])
        p = Parameter(v)
        report = finite_diff_check(lambda: ops.sum(ops.mul(p, p)), [p], epsilon=1e-3)
        np.testing.assert_allclose(p.grad, 2 * v, rtol=1e-6)
        assert report.max_error < 1e-4

    def test_detects_wrong_gradient(self):
        p = Parameter(np.array([1.0, 2.0]))

        def loss():
            out = Tensor._from_op(p.data ** 2, (p,), lambda g: (g * p.data,))  # off by 2x
            return ops.sum(out)

        assert finite_diff_check(loss, [p]).max_error > 0.1

    def test_non_finite_reported(self):
        p = Parameter(np.array([-1.0]))
        report = finite_diff_check(lambda: ops.sum(ops.log(p)), [p])
        assert not report.finite
        assert not report.passed(1e-2)

    def test_restores_parameters(self, rng):
        v = rng.standard_normal(5).astype(np.float32)
        p = Parameter(v.copy())
        finite_diff_check(lambda: ops.sum(ops.mul(p, p)), [p], reference_dtype=np.float64)
        np.testing.assert_array_equal(p.data, v)
        assert p.data.dtype == np.float32

    def test_epsilon_range(self):
        p = Parameter(np.zeros(1))
        with pytest.raises(ValueError):
            finite_diff_check(lambda: ops.sum(p), [p], epsilon=0.5)

    def test_relative_error_zero_vectors(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


@settings(max_examples=30, deadline=None)
@given(
    shape=st.tuples(st.integers(1, 2), st.integers(1, 3), st.integers(3, 6), st.integers(3, 6)),
    seed=st.integers(0, 10_000),
)
def test_conv_is_linear_in_input(shape, seed):
    r = np.random.default_rng(seed)
    w = Tensor(r.standard_normal((2, shape[1], 3, 3)))
    a, b = r.standard_normal(shape), r.standard_normal(shape)
    lhs = ops.conv2d(Tensor(a + b, dtype=np.float64), w, padding=1).data
    rhs = ops.conv2d(Tensor(a, dtype=np.float64), w, padding=1).data + ops.conv2d(Tensor(b, dtype=np.float64), w, padding=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
