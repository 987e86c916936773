"""Adam, the step schedule and the training loop."""
import math

import numpy as np
import pytest

from cpdnet.checkpoint import load_checkpoint
from cpdnet.data import synthetic_squares
from cpdnet.model import build_model
from cpdnet.oracles import adam_scalar
from cpdnet.tensor import Parameter
from cpdnet.trainer import Adam, TrainConfig, TrainingDiverged, adam_step, lr_at, train


def scalar_param(x0=0.0):
    return Parameter(np.array([x0]), dtype=np.float64)


def quick_config(**kw):
    base = dict(epochs=2, steps_per_epoch=3, batch=2, patch=32, seed=0, probe_images=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def corpus():
    return synthetic_squares(4, 32, 0)


class TestTrainConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.lr0, c.epochs, c.lr_decay_factor, c.lr_decay_every) == (1e-4, 25, 0.1, 5)
        assert (c.weight_decay, c.batch, c.patch, c.loss) == (5e-4, 8, 320, "HFL")

    @pytest.mark.parametrize("kw", [{"epochs": 0}, {"lr0": 0.0}, {"batch": 0}, {"patch": 36}, {"loss": "dice"}, {"weight_decay": -1.0}])
    def test_rejected(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestSchedule:
    def test_anchors(self):
        c = TrainConfig()
        assert lr_at(0, c) == 1e-4
        assert lr_at(4, c) == 1e-4
        assert lr_at(5, c) == 1e-5
        assert lr_at(24, c) == 1e-8

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            lr_at(25, TrainConfig())

    def test_every_epoch(self):
        c = TrainConfig()
        for e in range(c.epochs):
            assert lr_at(e, c) == pytest.approx(1e-4 * 0.1 ** (e // 5), rel=1e-12)


class TestAdam:
    def test_first_step_is_minus_lr(self):
        p = scalar_param()
        p.grad = np.array([1.0])
        Adam([p]).step(0.1)
        assert p.data[0] == pytest.approx(-0.1, rel=1e-6)

    def test_zero_gradient_fixed_point(self):
        p = scalar_param(0.7)
        opt = Adam([p], weight_decay=0.0)
        for _ in range(5):
            p.grad = np.zeros(1)
            assert adam_step([p], opt, 0.1)
        assert p.data[0] == 0.7

    def test_quadratic_matches_scalar_oracle(self):
        # loss (x - 3)^2, gradient 2(x - 3)
        lr, wd = 0.1, 0.01
        n = [0]

        def grad(x):
            if n[0] == 10:
                return None
            n[0] += 1
            return 2.0 * (x - 3.0)

        want = adam_scalar(grad, lr, weight_decay=wd)
        p = scalar_param()
        opt = Adam([p], weight_decay=wd)
        got = []
        for _ in range(10):
            p.grad = 2.0 * (p.data - 3.0)
            opt.step(lr)
            got.append(float(p.data[0]))
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-15)
        losses = [(x - 3.0) ** 2 for x in got]
        assert all(b < a for a, b in zip(losses[1:], losses[2:]))

    def test_coupled_decay_differs(self):
        a, b = scalar_param(1.0), scalar_param(1.0)
        oa, ob = Adam([a], weight_decay=0.1), Adam([b], weight_decay=0.1, decoupled=False)
        for _ in range(3):
            a.grad = np.array([0.5])
            b.grad = np.array([0.5])
            oa.step(0.1)
            ob.step(0.1)
        assert a.data[0] != b.data[0]

    def test_non_finite_gradient_skipped(self):
        p = scalar_param(1.0)
        opt = Adam([p])
        p.grad = np.array([np.nan])
        assert not opt.step(0.1)
        assert opt.t == 0 and p.data[0] == 1.0 and opt.m[0][0] == 0.0

    def test_missing_gradient(self):
        with pytest.raises(ValueError):
            Adam([scalar_param()]).step(0.1)


class TestTrain:
    def test_overfit_loss_drops(self, corpus):
        model = build_model(16, seed=0)
        cfg = TrainConfig(epochs=1, steps_per_epoch=200, batch=4, patch=32, seed=0, probe_images=0)
        result = train(model, corpus, cfg, probe=False)
        assert len(result.losses) == 200
        assert result.losses[-1] < result.losses[9]

    def test_deterministic(self, corpus):
        runs = [train(build_model(16, seed=1), corpus, quick_config()).losses for _ in range(2)]
        assert runs[0] == runs[1]

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train(build_model(16, seed=0), [], quick_config())

    def test_checkpoints_and_log(self, corpus, tmp_path):
        result = train(build_model(16, seed=0), corpus, quick_config(), out_dir=tmp_path)
        assert [p.name for p in result.checkpoints] == ["ckpt_epoch0", "ckpt_epoch1"]
        rows = [l.split() for l in (tmp_path / "metrics.log").read_text().splitlines() if not l.startswith("#")]
        assert [int(r[0]) for r in rows] == list(range(1, 7))
        assert [float(r[2]) for r in rows] == [1e-4] * 6
        assert [float(r[3]) for r in rows] == result.losses
        extra = load_checkpoint(result.checkpoints[-1]).extra
        assert (extra["epoch"], extra["step"], extra["adam_t"]) == (1, 6, 6)

    def test_resume_bit_identical(self, corpus, tmp_path):
        cfg = quick_config(epochs=3)
        full = train(build_model(16, seed=2), corpus, cfg, out_dir=tmp_path / "full")
        head = train(build_model(16, seed=2), corpus, quick_config(epochs=3), out_dir=tmp_path / "head")
        resumed = train(build_model(16, seed=2), corpus, cfg, out_dir=tmp_path / "tail", resume_from=head.checkpoints[0])
        assert resumed.losses == full.losses[3:]
        a = full.model.state_dict()
        b = resumed.model.state_dict()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_probe_logged(self, corpus):
        result = train(build_model(16, seed=0), corpus, quick_config(epochs=1, probe_images=2))
        assert len(result.probe) == 1 and 0.0 <= result.probe[0] <= 1.0

    def test_divergence_guard(self, corpus, tmp_path):
        cfg = quick_config(divergence_threshold=1e-6)
        with pytest.raises(TrainingDiverged) as info:
            train(build_model(16, seed=0), corpus, cfg, out_dir=tmp_path)
        assert info.value.checkpoint is not None and info.value.checkpoint.exists()

    def test_wce_loss(self, corpus):
        result = train(build_model(16, seed=0), corpus, quick_config(epochs=1, loss="WCE"))
        assert all(math.isfinite(v) for v in result.losses)
