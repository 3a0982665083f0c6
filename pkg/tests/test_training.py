import csv

import numpy as np
import pytest
import torch

from helpers import make_face_set
from landmarker import training as tr
from landmarker.networks import BundleConfig, new_bundle


def loss_oracle(gp, gg, rps, rgs, lam):
    """Plain summation, coded independently of the implementation."""
    total = 0.0
    n = len(gp)
    for i in range(n):
        total += (gp[i][0] - gg[i][0]) ** 2 + (gp[i][1] - gg[i][1]) ** 2
    total /= n
    for rp, rg in zip(rps, rgs):
        term = 0.0
        for j in range(len(rp)):
            term += (rp[j][0] - rg[j][0]) ** 2 + (rp[j][1] - rg[j][1]) ** 2
        total += lam * term / len(rp)
    return total


def random_normalized(rng, n):
    return rng.uniform(-0.5, 0.5, size=(n, 2))


class TestLoss:
    def test_perfect_predictions_zero(self):
        rng = np.random.default_rng(0)
        g = random_normalized(rng, 68)
        regions = [random_normalized(rng, n) for n in (11, 11, 9, 20)]
        loss = tr.landmark_loss(g, g, regions, regions, lam=0.25)
        assert float(loss) == 0.0

    def test_constant_offset_case(self):
        rng = np.random.default_rng(1)
        gg = rng.uniform(-0.35, 0.35, size=(68, 2))
        gp = gg + np.array([0.1, 0.0])
        regions = [random_normalized(rng, n) for n in (11, 11, 9, 20)]
        loss = tr.landmark_loss(gp, gg, regions, regions, lam=0.25)
        assert float(loss) == pytest.approx(0.01, abs=1e-12)

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            gp, gg = random_normalized(rng, 68), random_normalized(rng, 68)
            rps = [random_normalized(rng, n) for n in (11, 11, 9, 20)]
            rgs = [random_normalized(rng, n) for n in (11, 11, 9, 20)]
            lam = float(rng.uniform(0, 1))
            ours = float(tr.landmark_loss(gp, gg, rps, rgs, lam=lam))
            assert abs(ours - loss_oracle(gp, gg, rps, rgs, lam)) < 1e-10

    def test_unnormalized_inputs_rejected(self):
        gg = np.zeros((68, 2))
        gp = np.zeros((68, 2))
        gp[0] = (130.0, 120.0)  # pixel-space values
        with pytest.raises(ValueError, match="unnormalized"):
            tr.landmark_loss(gp, gg)

    def test_mismatched_counts_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            tr.landmark_loss(np.zeros((68, 2)), np.zeros((51, 2)))
        with pytest.raises(ValueError, match="region count"):
            tr.landmark_loss(np.zeros((68, 2)), np.zeros((68, 2)),
                             [np.zeros((9, 2))], [])

    def test_negative_lam_rejected(self):
        with pytest.raises(ValueError, match="lam"):
            tr.landmark_loss(np.zeros((68, 2)), np.zeros((68, 2)), lam=-0.1)

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(3)
        gp, gg = random_normalized(rng, 68), random_normalized(rng, 68)
        assert float(tr.landmark_loss(gp, gg)) > 0.0

    def test_lam_zero_region_gradients_are_zero(self):
        torch.manual_seed(4)
        gp = torch.rand(68, 2) - 0.5
        gg = torch.rand(68, 2) - 0.5
        rp = [(torch.rand(n, 2) - 0.5).requires_grad_(True) for n in (11, 11, 9, 20)]
        rg = [torch.rand(n, 2) - 0.5 for n in (11, 11, 9, 20)]
        gp.requires_grad_(True)
        loss = tr.landmark_loss(gp, gg, rp, rg, lam=0.0)
        loss.backward()
        assert gp.grad.abs().sum() > 0
        for p in rp:
            assert torch.all(p.grad == 0)

    def test_batched_inputs(self):
        rng = np.random.default_rng(5)
        gp = rng.uniform(-0.5, 0.5, size=(4, 68, 2))
        gg = rng.uniform(-0.5, 0.5, size=(4, 68, 2))
        per_image = np.mean([
            float(tr.landmark_loss(gp[i], gg[i])) for i in range(4)
        ])
        batched = float(tr.landmark_loss(gp, gg))
        assert batched == pytest.approx(per_image, abs=1e-12)


class TestSchedule:
    def test_constant_then_linear_to_zero(self):
        cfg = tr.TrainingConfig(epochs=60, lr=1e-4, decay_start=30, batch_size=4)
        for e in range(30):
            assert tr.learning_rate(e, cfg) == 1e-4
        assert tr.learning_rate(30, cfg) == pytest.approx(1e-4)
        assert tr.learning_rate(59, cfg) == 0.0
        # pointwise linearity
        for e in range(30, 60):
            expected = 1e-4 * (59 - e) / 29
            assert tr.learning_rate(e, cfg) == pytest.approx(expected)

    def test_phase_defaults(self):
        p1, p2 = tr.phase1_defaults(), tr.phase2_defaults()
        assert (p1.epochs, p1.decay_start, p1.batch_size) == (60, 30, 16)
        assert (p2.epochs, p2.decay_start, p2.batch_size) == (30, 10, 4)
        assert p1.lam == 0.25 and p1.lr == 1e-4

    def test_config_validation(self):
        with pytest.raises(ValueError, match="lam"):
            tr.TrainingConfig(lam=-1.0)
        with pytest.raises(ValueError, match="decay_start"):
            tr.TrainingConfig(epochs=10, decay_start=10)


TINY = BundleConfig(base_width=4, num_blocks=1, patch_size=64, hr_size=256)


def tiny_config(**kw):
    base = dict(epochs=3, lr=1e-3, decay_start=1, batch_size=2, patience=10, seed=0)
    base.update(kw)
    return tr.TrainingConfig(**base)


class TestTrainGlobal:
    def test_loss_decreases_and_logs(self, tmp_path):
        data = make_face_set(2, size=256, seed=11)
        net, history = tr.train_global(data, tiny_config(epochs=4), run_dir=tmp_path,
                                       bundle_config=TINY)
        assert len(history) == 4
        assert (tmp_path / "metrics.csv").exists()
        with open(tmp_path / "metrics.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["phase"] == "global"
        assert float(rows[0]["lr"]) == 1e-3
        assert (tmp_path / "config.json").exists()
        assert (tmp_path / "global_best.pt").exists()

    def test_deterministic_loss_curves(self):
        data = make_face_set(2, size=256, seed=12)
        _, h1 = tr.train_global(data, tiny_config(), bundle_config=TINY)
        _, h2 = tr.train_global(data, tiny_config(), bundle_config=TINY)
        assert [r["train_loss"] for r in h1] == [r["train_loss"] for r in h2]

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            tr.train_global([], tiny_config(), bundle_config=TINY)

    def test_wrong_image_size_rejected(self):
        data = make_face_set(1, size=128, seed=13)
        with pytest.raises(ValueError, match="expected 256x256"):
            tr.train_global(data, tiny_config(), bundle_config=TINY)

    def test_early_stopping_restores_best(self):
        data = make_face_set(2, size=256, seed=14)
        cfg = tiny_config(epochs=6, patience=0, lr=5e-2)  # aggressive lr: bounces
        net, history = tr.train_global(data, cfg, bundle_config=TINY)
        assert len(history) <= 6


class TestTrainJoint:
    def test_joint_step_runs_and_logs(self, tmp_path):
        torch.manual_seed(15)
        data = make_face_set(2, size=256, seed=15)
        bundle = new_bundle(TINY.base_width, TINY.num_blocks, TINY.patch_size,
                            TINY.hr_size)
        bundle, history = tr.train_joint(bundle, data, tiny_config(epochs=2),
                                         run_dir=tmp_path)
        assert len(history) == 2
        assert all(r["phase"] == "joint" for r in history)
        assert np.isfinite([r["train_loss"] for r in history]).all()
        assert (tmp_path / "bundle_best" / "bundle.json").exists()

    def test_validation_loss_logged(self):
        data = make_face_set(2, size=256, seed=16)
        val = make_face_set(1, size=256, seed=17)
        bundle = new_bundle(TINY.base_width, TINY.num_blocks, TINY.patch_size,
                            TINY.hr_size)
        _, history = tr.train_joint(bundle, data, tiny_config(epochs=2), val_data=val)
        assert all(isinstance(r["val_loss"], float) for r in history)
