"""Training loop: Adam semantics, history, determinism, convergence."""

from __future__ import annotations

import numpy as np
import pytest

from headpose import autodiff as ad
from headpose.geometry import EulerPose
from headpose.keypoints import KeypointSet, normalize
from headpose.model import Model, ModelConfig
from headpose.synthetic import NoiseModel, Sample, generate_dataset
from headpose.training import (
    AdamState,
    TrainConfig,
    TrainHistory,
    prepare_arrays,
    train,
)


def small_dataset(n=64, seed=0, noise=NoiseModel()):
    return generate_dataset(n, np.random.default_rng(seed), noise=noise)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.batch_size == 64 and cfg.learning_rate == 0.001

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(n_epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(beta1=1.0)
        with pytest.raises(ValueError):
            TrainConfig(epsilon=0.0)
        with pytest.raises(ValueError):
            TrainConfig(val_fraction=1.0)

    def test_to_dict_round_trip(self):
        cfg = TrainConfig(n_epochs=5, batch_size=16)
        assert TrainConfig(**cfg.to_dict()) == cfg


class TestAdam:
    def test_first_step_identity(self):
        # with zeroed moments the bias correction cancels: step is
        # -lr * g / (|g| + eps) elementwise
        w = ad.Tensor(np.array([1.0, -2.0, 3.0]))
        g = np.array([0.5, -4.0, 1e-12])
        w.grad = g.copy()
        cfg = TrainConfig(n_epochs=1, learning_rate=0.01)
        AdamState([w]).step([w], cfg)
        expect = np.array([1.0, -2.0, 3.0]) - 0.01 * g / (np.abs(g) + cfg.epsilon)
        assert np.array_equal(w.data, expect)

    def test_moments_accumulate(self):
        w = ad.Tensor(np.array([0.0]))
        cfg = TrainConfig(n_epochs=1, learning_rate=0.1)
        opt = AdamState([w])
        for _ in range(3):
            w.grad = np.array([1.0])
            opt.step([w], cfg)
        assert opt.t == 3
        # constant gradient: every step is about -lr
        assert w.data[0] == pytest.approx(-0.3, rel=1e-6)

    def test_skips_missing_gradient(self):
        w = ad.Tensor(np.array([1.0]))
        w.grad = None
        AdamState([w]).step([w], TrainConfig())
        assert w.data[0] == 1.0

    def test_non_finite_gradient_raises(self):
        w = ad.Tensor(np.array([1.0]))
        w.grad = np.array([np.nan])
        with pytest.raises(FloatingPointError):
            AdamState([w]).step([w], TrainConfig())


class TestPrepareArrays:
    def test_shapes_and_targets(self):
        samples = small_dataset(8, seed=1)
        x1, x2, c, targets = prepare_arrays(samples)
        assert x1.shape == x2.shape == c.shape == (8, 5)
        assert targets.shape == (8, 3)
        for i, s in enumerate(samples):
            assert targets[i].tolist() == [s.pose.yaw, s.pose.pitch, s.pose.roll]
            n = normalize(s.keypoints)
            assert np.array_equal(x1[i], n.x1)


class TestTrainLoop:
    def test_history_lengths(self):
        m = Model.build(ModelConfig("heteroscedastic"), np.random.default_rng(0))
        hist = train(m, small_dataset(48, 2), TrainConfig(n_epochs=3, batch_size=16),
                     np.random.default_rng(1))
        assert len(hist.train_loss) == 3
        assert len(hist.val_loss) == 3
        assert len(hist.val_mae) == 3 and len(hist.val_mae[0]) == 3
        assert 0 <= hist.best_epoch < 3
        assert hist.best_val_loss == min(hist.val_loss)

    def test_explicit_validation_set(self):
        m = Model.build(ModelConfig("mse"), np.random.default_rng(2))
        hist = train(m, small_dataset(32, 3), TrainConfig(n_epochs=2, batch_size=16),
                     np.random.default_rng(3), val_samples=small_dataset(16, 4))
        assert len(hist.val_loss) == 2

    def test_no_validation_keeps_last_epoch(self):
        m = Model.build(ModelConfig("mse"), np.random.default_rng(4))
        cfg = TrainConfig(n_epochs=2, batch_size=16, val_fraction=0.0)
        hist = train(m, small_dataset(32, 5), cfg, np.random.default_rng(5))
        assert hist.val_loss == [] and hist.best_epoch == 1

    def test_parameters_end_at_best_epoch(self):
        from headpose.losses import loss_graph
        m = Model.build(ModelConfig("heteroscedastic"), np.random.default_rng(6))
        val = small_dataset(24, 7)
        hist = train(m, small_dataset(64, 8), TrainConfig(n_epochs=4, batch_size=16),
                     np.random.default_rng(9), val_samples=val)
        x1, x2, c, t = prepare_arrays(val)
        now = float(loss_graph("heteroscedastic", m.forward(x1, x2, c), t).data)
        assert now == pytest.approx(hist.best_val_loss, abs=1e-12)

    def test_empty_dataset_raises(self):
        m = Model.build(ModelConfig("mse"), np.random.default_rng(10))
        with pytest.raises(ValueError):
            train(m, [], TrainConfig(), np.random.default_rng(0))

    def test_split_cannot_eat_everything(self):
        m = Model.build(ModelConfig("mse"), np.random.default_rng(11))
        with pytest.raises(ValueError):
            train(m, small_dataset(2, 12), TrainConfig(val_fraction=0.9),
                  np.random.default_rng(0))

    def test_non_finite_loss_reports_position(self):
        m = Model.build(ModelConfig("mse"), np.random.default_rng(13))
        bad = small_dataset(8, 14)
        bad[0] = Sample(bad[0].keypoints, EulerPose(np.inf, 0.0, 0.0))
        cfg = TrainConfig(n_epochs=1, batch_size=8, val_fraction=0.0)
        with pytest.raises(FloatingPointError, match="epoch 0"):
            train(m, bad, cfg, np.random.default_rng(0))

    def test_deterministic_for_fixed_seeds(self):
        def run():
            m = Model.build(ModelConfig("heteroscedastic"), np.random.default_rng(20))
            hist = train(m, small_dataset(48, 21, NoiseModel(1.0, 0.02)),
                         TrainConfig(n_epochs=3, batch_size=16), np.random.default_rng(22))
            return m.snapshot(), hist.train_loss
        snap_a, loss_a = run()
        snap_b, loss_b = run()
        assert loss_a == loss_b
        for name in snap_a:
            assert np.array_equal(snap_a[name], snap_b[name])

    def test_all_losses_reduce_training_loss(self):
        data = small_dataset(96, 23)
        for kind in ("heteroscedastic", "mse", "combined"):
            m = Model.build(ModelConfig(kind), np.random.default_rng(24))
            cfg = TrainConfig(n_epochs=8, batch_size=32, val_fraction=0.0)
            hist = train(m, data, cfg, np.random.default_rng(25))
            assert hist.train_loss[-1] < hist.train_loss[0]


class TestConvergence:
    def test_linear_task_converges_fast(self):
        # targets are a fixed linear map of the normalized coordinates, a
        # function the trunk can represent almost exactly
        rng = np.random.default_rng(42)
        a_map = rng.normal(0, 4.0, size=(3, 10))

        def make(n, seed):
            g = np.random.default_rng(seed)
            out = []
            for _ in range(n):
                coords = g.uniform(-80, 80, size=(5, 2))
                kp = KeypointSet.from_triplets([[x, y, 1.0] for x, y in coords])
                nz = normalize(kp)
                pose = a_map @ np.concatenate([nz.x1, nz.x2])
                out.append(Sample(kp, EulerPose(*pose)))
            return out

        m = Model.build(ModelConfig("mse"), np.random.default_rng(0))
        cfg = TrainConfig(n_epochs=200, batch_size=32, val_fraction=0.0)
        hist = train(m, make(512, 1), cfg, np.random.default_rng(1), val_samples=make(200, 2))
        best = hist.val_mae[hist.best_epoch]
        assert float(np.mean(best)) < 1.0


class TestHistory:
    def test_to_dict_keys(self):
        hist = TrainHistory(train_loss=[1.0], val_loss=[2.0], val_mae=[[1, 2, 3]],
                            best_epoch=0, best_val_loss=2.0)
        d = hist.to_dict()
        assert list(d.keys()) == ["train_loss", "val_loss", "val_mae", "best_epoch", "best_val_loss"]
