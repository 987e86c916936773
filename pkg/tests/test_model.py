"""CPD-Net assembly: MSEM, DRC decoder, lateral branch and the full model."""
import numpy as np
import pytest

from cpdnet import ops
from cpdnet.model import (
    BackboneConfig,
    ConvNextV2Block,
    DrcDecoder,
    MsemModule,
    build_model,
    drc_forward,
    model_forward,
    msem_forward,
    stage_shapes,
)
from cpdnet.nn import Conv2d, Module, count_parameters
from cpdnet.tensor import Parameter, Tensor, no_grad

BUDGETS = {16: 0.63e6, 32: 2.47e6, 64: 9.75e6}


@pytest.fixture(scope="module")
def tiny():
    model = build_model(16, seed=0)
    model.eval()
    return model


def zero_convs(module: Module) -> None:
    for m in module.modules():
        if isinstance(m, Conv2d):
            m.weight.data = np.zeros_like(m.weight.data)
            if m.bias is not None:
                m.bias.data = np.zeros_like(m.bias.data)


class TestBackboneConfig:
    def test_stage_widths(self):
        assert BackboneConfig(32).stage_channels == (32, 64, 128, 128)

    @pytest.mark.parametrize("c", (8, 24, 48))
    def test_rejects_unsupported(self, c):
        with pytest.raises(ValueError):
            BackboneConfig(c)


class TestBuildModel:
    def test_deterministic(self):
        a = build_model(16, seed=3).state_dict()
        b = build_model(16, seed=3).state_dict()
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_seed_changes_weights(self):
        a = build_model(16, seed=1).state_dict()
        b = build_model(16, seed=2).state_dict()
        assert any(not np.array_equal(a[k], b[k]) for k in a if k.endswith("weight"))

    @pytest.mark.parametrize("c", sorted(BUDGETS))
    def test_parameter_budget(self, c):
        n = count_parameters(build_model(c, seed=0))
        assert 0.9 * BUDGETS[c] <= n <= 1.1 * BUDGETS[c]

    def test_initialization(self):
        model = build_model(16, seed=0)
        for name, p in model.named_parameters():
            if name.endswith("bias") and "norm" not in name and "bn" not in name and "grn" not in name:
                assert np.all(p.data == 0), name


class TestCountParameters:
    def test_single_conv(self, rng):
        assert count_parameters(Conv2d(3, 16, 3, rng)) == 448

    def test_empty(self):
        assert count_parameters([]) == 0


class TestMsem:
    def test_zero_weights_identity(self, rng):
        m = MsemModule(16, rng)
        zero_convs(m)
        x = rng.standard_normal((1, 16, 10, 10)).astype(np.float32)
        np.testing.assert_array_equal(msem_forward(m, Tensor(x)).data, x)

    def test_shape(self, rng):
        m = MsemModule(16, rng)
        assert m(Tensor(rng.random((1, 16, 20, 20)).astype(np.float32))).shape == (1, 16, 20, 20)

    def test_rejects_wrong_channels(self, rng):
        m = MsemModule(16, rng)
        with pytest.raises(ValueError):
            m(Tensor(np.zeros((1, 8, 4, 4), dtype=np.float32)))

    def test_branch_receptive_fields(self, rng):
        m = MsemModule(8, rng)
        for b in m.branches:
            b.reduce.weight.data = np.abs(b.reduce.weight.data) + 0.1
            b.context.weight.data = np.abs(b.context.weight.data) + 0.1
        size, c = 21, 10
        base = np.zeros((1, 8, size, size), dtype=np.float64)
        bumped = base.copy()
        bumped[0, :, c, c] = 1.0
        with no_grad():
            ref = m.branch_outputs(Tensor(base))
            out = m.branch_outputs(Tensor(bumped))
        for want, r, o in zip((3, 5, 7, 9), ref, out):
            changed = np.any(o.data[0] != r.data[0], axis=0)
            rows = np.nonzero(changed.any(axis=1))[0]
            cols = np.nonzero(changed.any(axis=0))[0]
            assert rows.max() - rows.min() + 1 == want
            assert cols.max() - cols.min() + 1 == want


class TestDrc:
    def test_zero_weights_identity(self, rng):
        d = DrcDecoder(16, 16, rng)
        zero_convs(d)
        d.eval()
        x = rng.standard_normal((1, 16, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(drc_forward(d, Tensor(x)).data, x)

    def test_zero_weights_projected(self, rng):
        d = DrcDecoder(16, 8, rng)
        for name in ("conv1", "conv2", "conv3", "conv4"):
            getattr(d, name).weight.data[:] = 0
        d.eval()
        x = rng.standard_normal((1, 16, 6, 6)).astype(np.float32)
        np.testing.assert_allclose(d(Tensor(x)).data, d.proj(Tensor(x)).data, atol=1e-6)

    def test_shape(self, rng):
        d = DrcDecoder(64, 64, rng)
        assert d(Tensor(rng.random((1, 64, 40, 40)).astype(np.float32))).shape == (1, 64, 40, 40)

    def test_gradient_through_residual(self, rng):
        d = DrcDecoder(8, 8, rng)
        zero_convs(d)
        x = Parameter(rng.standard_normal((2, 8, 5, 5)), dtype=np.float64)
        probe = Tensor(rng.standard_normal((2, 8, 5, 5)))
        ops.sum(ops.mul(d(x), probe)).backward()
        assert np.linalg.norm(x.grad) > 0
        # spot check one entry
        h = 1e-6
        idx = (1, 3, 2, 2)
        old = x.data.copy()
        x.data = old.copy()
        x.data[idx] += h
        up = float(ops.sum(ops.mul(d(x), probe)).data)
        x.data = old.copy()
        x.data[idx] -= h
        down = float(ops.sum(ops.mul(d(x), probe)).data)
        assert x.grad[idx] == pytest.approx((up - down) / (2 * h), rel=1e-5)

    def test_rejects_wrong_channels(self, rng):
        with pytest.raises(ValueError):
            DrcDecoder(16, 16, rng)(Tensor(np.zeros((1, 8, 4, 4), dtype=np.float32)))


class TestLateral:
    def test_shape_preserved(self, rng):
        b = ConvNextV2Block(16, rng)
        assert b(Tensor(rng.random((1, 16, 12, 12)).astype(np.float32))).shape == (1, 16, 12, 12)


class TestModelForward:
    def test_320_shape_and_range(self, tiny, rng):
        x = Tensor(rng.random((1, 3, 320, 320)).astype(np.float32))
        with no_grad():
            out, feats = tiny(x, return_features=True)
        assert out.shape == (1, 1, 320, 320)
        assert np.all((out.data > 0) & (out.data < 1))
        assert [f.shape[2:] for f in feats] == [(320, 320), (160, 160), (80, 80), (40, 40)]
        assert [f.shape[1:] for f in feats] == stage_shapes(tiny.config, 320, 320)

    def test_zero_image_finite(self, tiny):
        with no_grad():
            out = model_forward(tiny, Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32)))
        assert np.all(np.isfinite(out.data))

    def test_inference_deterministic(self, tiny, rng):
        x = Tensor(rng.random((1, 3, 48, 48)).astype(np.float32))
        with no_grad():
            a = model_forward(tiny, x).data
            b = model_forward(tiny, x).data
        np.testing.assert_array_equal(a, b)

    def test_rejects_non_divisible(self, tiny):
        with pytest.raises(ValueError, match="pad by 3 rows"):
            tiny(Tensor(np.zeros((1, 3, 37, 40), dtype=np.float32)))

    def test_rejects_wrong_channels(self, tiny):
        with pytest.raises(ValueError):
            tiny(Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32)))

    def test_non_square(self, tiny, rng):
        with no_grad():
            out = tiny(Tensor(rng.random((2, 3, 24, 40)).astype(np.float32)))
        assert out.shape == (2, 1, 24, 40)

    def test_backward_reaches_all_parameters(self, rng):
        model = build_model(16, seed=0)
        model.train()
        x = Tensor(rng.random((2, 3, 16, 16)).astype(np.float32))
        ops.sum(model(x)).backward()
        missing = [n for n, p in model.named_parameters() if p.grad is None]
        assert not missing
