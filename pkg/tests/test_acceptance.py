"""Acceptance suite: one test per criterion, each printing a PASS line.

Run the whole suite with `pytest tests/test_acceptance.py -v -s`; the two
training-based criteria are marked slow (deselect with -m "not slow").
"""
import math
import threading

import numpy as np
import pytest
import torch

from helpers import face_template, make_face_set, stub_bundle
from landmarker import geometry as geo
from landmarker import heatmaps as hm
from landmarker import regions as rg
from landmarker import training as tr
from landmarker.evaluation import mean_error
from landmarker.landmarks import (
    INNER_51,
    LandmarkSet,
    denormalize_points,
    normalize_points,
)
from landmarker.networks import BundleConfig, new_bundle
from landmarker.pipeline import forward_full
from landmarker.registration import intersection_contour_overlay, register
from test_geometry import tps_oracle
from test_heatmaps import softargmax_oracle
from test_training import loss_oracle


def report(name: str, detail: str = ""):
    print(f"\nPASS {name}" + (f" ({detail})" if detail else ""))


class TestSoftargmaxOracleEquivalence:
    def test_criterion(self):
        rng = np.random.default_rng(1000)
        worst = 0.0
        for _ in range(100):
            stack = rng.normal(size=(1, 8, 8))
            ours = hm.spatial_softargmax(stack)
            ref = softargmax_oracle(stack)
            worst = max(worst, float(np.abs(ours - ref).max()))
        assert worst < 1e-9

        grad_worst = 0.0
        for _ in range(5):
            logits = torch.tensor(rng.normal(size=(1, 8, 8)), requires_grad=True)
            weights = torch.tensor(rng.normal(size=(1, 2)))
            (hm.spatial_softargmax(logits) * weights).sum().backward()
            analytic = logits.grad.numpy()
            step = 1e-4
            numeric = np.zeros_like(analytic)
            base = logits.detach().numpy()
            for i in range(8):
                for j in range(8):
                    plus, minus = base.copy(), base.copy()
                    plus[0, i, j] += step
                    minus[0, i, j] -= step
                    fp = (hm.spatial_softargmax(plus) * weights.numpy()).sum()
                    fm = (hm.spatial_softargmax(minus) * weights.numpy()).sum()
                    numeric[0, i, j] = (fp - fm) / (2 * step)
            rel = np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-12)
            grad_worst = max(grad_worst, float(rel))
        assert grad_worst < 1e-4
        report("softargmax oracle equivalence",
               f"max dev {worst:.2e}, grad rel {grad_worst:.2e}")


class TestTpsExactness:
    def test_criterion(self):
        rng = np.random.default_rng(1001)
        worst_resid, worst_side = 0.0, 0.0
        for _ in range(50):
            k = int(rng.integers(4, 21))
            src = rng.uniform(0, 512, size=(k, 2))
            dst = src + rng.normal(scale=15, size=(k, 2))
            tps = geo.ThinPlateSpline(regularization=0.0).fit(src, dst)
            resid = np.abs(tps.transform(src) - dst).max()
            side = max(
                np.abs(tps.weights_.sum(axis=0)).max(),
                np.abs(src.T @ tps.weights_).max(),
            )
            worst_resid = max(worst_resid, float(resid))
            worst_side = max(worst_side, float(side))
        assert worst_resid <= 1e-6
        assert worst_side <= 1e-8
        report("TPS exactness",
               f"max control residual {worst_resid:.2e}, side conditions {worst_side:.2e}")

    def test_against_independent_solver(self):
        rng = np.random.default_rng(1002)
        src = rng.uniform(0, 128, size=(7, 2))
        dst = src + rng.normal(scale=5, size=(7, 2))
        queries = rng.uniform(0, 128, size=(30, 2))
        tps = geo.ThinPlateSpline().fit(src, dst)
        assert np.abs(tps.transform(queries) - tps_oracle(src, dst, queries)).max() < 1e-6


class TestRansacRecovery:
    def test_criterion(self):
        rng = np.random.default_rng(1003)
        successes = 0
        for trial in range(100):
            theta = rng.uniform(-math.pi / 4, math.pi / 4)
            scale = rng.uniform(0.5, 2.0)
            tx, ty = rng.uniform(-100, 100, size=2)
            truth = geo.SimilarityTransform(theta, scale, tx, ty)
            src = rng.uniform(0, 1000, size=(41, 2))
            dst = truth.apply(src) + rng.normal(scale=0.5, size=(41, 2))
            out_idx = rng.choice(41, size=8, replace=False)  # 20% outliers
            dst[out_idx] += rng.uniform(50, 300, size=(8, 2)) * rng.choice(
                [-1.0, 1.0], size=(8, 2))
            res = geo.ransac_similarity(src, dst, threshold_px=3.0,
                                        max_trials=2000, seed=trial)
            t = res.transform
            ok = (
                abs(t.scale - scale) / scale <= 0.01
                and abs(t.theta - theta) <= math.radians(1.0)
                and abs(t.tx - tx) <= 2.0
                and abs(t.ty - ty) <= 2.0
            )
            successes += ok
        assert successes >= 99
        report("RANSAC recovery", f"{successes}/100 trials within tolerance")


class TestCoordinateRoundTrips:
    def test_criterion(self):
        rng = np.random.default_rng(1004)
        worst_region, worst_norm = 0.0, 0.0
        for _ in range(100):
            crop = rg.RegionCrop(
                "mouth",
                float(rng.uniform(0, 700)), float(rng.uniform(0, 700)),
                float(rng.uniform(30, 320)), float(rng.uniform(30, 320)),
            )
            local = rng.uniform(-20, 276, size=(100, 2))
            back = rg.global_to_local(rg.local_to_global(local, crop), crop)
            worst_region = max(worst_region, float(np.abs(back - local).max()))

            w, h = rng.uniform(32, 2048, size=2)
            pts = rng.uniform(-100, 2100, size=(100, 2))
            norm = normalize_points(pts, w, h)
            round_ = denormalize_points(norm, w, h)
            worst_norm = max(worst_norm, float(np.abs(round_ - pts).max()))
        assert worst_region < 1e-6
        assert worst_norm < 1e-6
        report("coordinate round-trips",
               f"region {worst_region:.2e}, normalize {worst_norm:.2e} over 20k cases")


class TestPlumbingOracle:
    def test_criterion(self):
        pairs = make_face_set(10, size=1024, seed=1005)
        errors = []
        for image, marks in pairs:
            bundle = stub_bundle(marks.points, patch=256, hr=1024)
            pred = forward_full(bundle, image)
            errors.append(mean_error(pred.refined_landmarks, marks))
        worst = max(errors)
        assert worst <= 1.0
        report("plumbing oracle", f"worst ME(68) {worst:.3f}px over 10 fixtures")


class TestLossIdentity:
    def test_criterion(self):
        rng = np.random.default_rng(1006)
        worst = 0.0
        for _ in range(50):
            gp = rng.uniform(-0.5, 0.5, size=(68, 2))
            gg = rng.uniform(-0.5, 0.5, size=(68, 2))
            rps = [rng.uniform(-0.5, 0.5, size=(n, 2)) for n in (11, 11, 9, 20)]
            rgs = [rng.uniform(-0.5, 0.5, size=(n, 2)) for n in (11, 11, 9, 20)]
            lam = float(rng.uniform(0, 1))
            ours = float(tr.landmark_loss(gp, gg, rps, rgs, lam=lam))
            worst = max(worst, abs(ours - loss_oracle(gp, gg, rps, rgs, lam)))
        assert worst < 1e-10

        gg = rng.uniform(-0.35, 0.35, size=(68, 2))
        gp = gg + np.array([0.1, 0.0])
        regions = [rng.uniform(-0.5, 0.5, size=(n, 2)) for n in (11, 11, 9, 20)]
        constant_case = float(tr.landmark_loss(gp, gg, regions, regions, lam=0.25))
        assert constant_case == pytest.approx(0.01, abs=1e-15)
        report("loss identity",
               f"oracle dev {worst:.2e}, constant-offset case = {constant_case}")


class TestRegistrationSelfConsistency:
    def test_criterion(self):
        rng = np.random.default_rng(1007)
        for seed in range(5):
            pts = face_template() * 4.0
            truth = geo.SimilarityTransform(
                float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0.8, 1.3)),
                float(rng.uniform(-50, 50)), float(rng.uniform(-50, 50)))
            a = LandmarkSet(pts, 1024, 1024)
            b = LandmarkSet(truth.apply(pts), 1024, 1024)
            fwd = register(a, b, seed=seed).transform
            bwd = register(b, a, seed=seed).transform
            comp = bwd.compose(fwd)
            assert abs(comp.theta) < 1e-3
            assert abs(comp.scale - 1.0) < 1e-3
            assert abs(comp.tx) < 1e-3 * 1024 and abs(comp.ty) < 1e-3 * 1024

        # intersection overlay vs pixelwise AND at tolerance 0
        m1 = rng.random((64, 64)) > 0.8
        m2 = rng.random((64, 64)) > 0.8
        overlay = intersection_contour_overlay([m1, m2], tolerance_px=0)
        white = (overlay == 255).all(axis=2)
        assert np.array_equal(white, m1 & m2)
        report("registration self-consistency",
               "composition within 1e-3; overlay == AND oracle")


class TestAnnotationDurability:
    def test_criterion(self, tmp_path, monkeypatch):
        from landmarker import service as svc
        from landmarker.datasets import write_image

        corpus = tmp_path / "corpus"
        corpus.mkdir()
        write_image(corpus / "a.png", np.zeros((32, 32, 3), dtype=np.uint8))
        store = svc.AnnotationStore(corpus)
        image_id = store.ids()[0]
        pts = [[float(i), float(i)] for i in range(68)]
        store.put(image_id, pts, expected_revision=0)

        # torn write: crash before rename must never corrupt the record
        def crash(src, dst):
            raise OSError("simulated crash")

        monkeypatch.setattr(svc.os, "replace", crash)
        with pytest.raises(OSError):
            store.put(image_id, [[9.0, 9.0]] * 68, expected_revision=1)
        monkeypatch.undo()
        rec = svc.AnnotationStore(corpus).get(image_id)
        assert rec.revision == 1 and rec.points == pts

        # two-writer interleaving: exactly one stale write succeeds
        store2 = svc.AnnotationStore(corpus)
        base = store2.get(image_id).revision
        outcomes = []

        def writer(k):
            try:
                store2.put(image_id, [[float(k)] * 2] * 68, expected_revision=base)
                outcomes.append("ok")
            except svc.RevisionConflictError:
                outcomes.append("conflict")

        threads = [threading.Thread(target=writer, args=(i,)) for i in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(outcomes) == ["conflict", "ok"]
        report("annotation-service durability",
               "torn write recovered; stale writer rejected")


# ---------------------------------------------------------------------------
# Training-based criteria (shared fixture, CPU-scaled network)
# ---------------------------------------------------------------------------

FIXTURE_BC = BundleConfig(base_width=16, num_blocks=2, patch_size=256,
                          hr_size=1024, temperature=1.0)
PHASE1_CFG = dict(epochs=200, lr=3e-3, decay_start=100, batch_size=2,
                  patience=300, seed=0)
# joint phase at toy scale: the region networks learn at 1e-3 while the
# already-overfit global net stays near its phase-1 optimum (on 2 images it
# would otherwise keep memorizing and outrun its own refinement)
PHASE2_CFG = dict(epochs=200, lr=3e-5, region_lr=1e-3, decay_start=100,
                  batch_size=1, patience=300, seed=0)


@pytest.fixture(scope="module")
def overfit_run():
    torch.manual_seed(0)
    data = make_face_set(2, size=1024, seed=100)
    net, history = tr.train_global(data, tr.TrainingConfig(**PHASE1_CFG),
                                   bundle_config=FIXTURE_BC)
    phase1_best = min(h["train_loss"] for h in history)
    bundle = new_bundle(FIXTURE_BC.base_width, FIXTURE_BC.num_blocks,
                        FIXTURE_BC.patch_size, FIXTURE_BC.hr_size,
                        FIXTURE_BC.temperature, from_global=net)
    bundle, _ = tr.train_joint(bundle, data, tr.TrainingConfig(**PHASE2_CFG))
    bundle.eval_()
    return data, bundle, phase1_best


@pytest.mark.slow
class TestOverfitSanity:
    def test_criterion(self, overfit_run):
        data, bundle, phase1_best = overfit_run
        assert phase1_best < 1e-3, f"phase-1 train loss {phase1_best:.2e}"

        refined_me, global_me = [], []
        for image, marks in data:
            pred = forward_full(bundle, image)
            refined_me.append(mean_error(pred.refined_landmarks, marks, INNER_51))
            global_me.append(mean_error(pred.global_landmarks, marks, INNER_51))
        assert np.mean(refined_me) <= np.mean(global_me) + 1e-9
        report("overfit sanity",
               f"phase-1 loss {phase1_best:.1e}; inner-51 ME refined "
               f"{np.mean(refined_me):.2f}px vs global {np.mean(global_me):.2f}px")


@pytest.mark.slow
class TestDirectionOfEffect:
    def test_criterion(self, overfit_run):
        data, bundle, _ = overfit_run
        # moderate group shifts (recoverable by refinement), mild group
        # scaling, noticeable whole-face stretch: the unrefined jaw sits on
        # the face boundary where stretch displaces it most
        aug = geo.AugmentConfig(group_shift_frac=0.012,
                                group_scale_range=(0.98, 1.02),
                                stretch_range=(0.96, 1.04))
        held_out = []
        for base_idx, (image, marks) in enumerate(data):
            for k in range(5):
                result = geo.augment_landmarks(
                    marks, aug, seed=np.random.SeedSequence([777, base_idx, k]))
                warped = geo.tps_warp_image(image, result.field)
                held_out.append((warped, result.landmarks))
        assert len(held_out) >= 10

        me51, me68 = [], []
        for image, marks in held_out:
            pred = forward_full(bundle, image).refined_landmarks
            me51.append(mean_error(pred, marks, INNER_51))
            me68.append(mean_error(pred, marks))
        assert np.mean(me51) < np.mean(me68)
        report("direction of effect (scaled)",
               f"ME(51) {np.mean(me51):.2f}px < ME(68) {np.mean(me68):.2f}px "
               f"on {len(held_out)} held-out augmented images")
