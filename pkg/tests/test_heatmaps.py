import numpy as np
import pytest
import torch

from landmarker import heatmaps as hm


def softargmax_oracle(stack, temperature=1.0):
    """Exhaustive double-loop expectation, independent of the implementation."""
    stack = np.asarray(stack, dtype=np.float64)
    c, h, w = stack.shape
    out = np.zeros((c, 2))
    for ci in range(c):
        logits = temperature * stack[ci]
        p = np.exp(logits - logits.max())
        p /= p.sum()
        ex = ey = 0.0
        for i in range(h):
            for j in range(w):
                ex += p[i, j] * j
                ey += p[i, j] * i
        out[ci] = (ex, ey)
    return out


class TestSpatialSoftargmax:
    def test_near_delta_collapses_to_peak(self):
        stack = np.zeros((1, 16, 16))
        stack[0, 5, 10] = 50.0
        out = hm.spatial_softargmax(stack)
        assert np.abs(out[0] - [10.0, 5.0]).max() < 1e-3

    def test_constant_map_gives_grid_centroid(self):
        out = hm.spatial_softargmax(np.zeros((1, 256, 256)))
        assert np.allclose(out[0], [127.5, 127.5])

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(11)
        stack = rng.normal(size=(4, 8, 8))
        out = hm.spatial_softargmax(stack, temperature=1.7)
        assert np.abs(out - softargmax_oracle(stack, 1.7)).max() < 1e-9

    def test_temperature_validation(self):
        with pytest.raises(ValueError, match="temperature"):
            hm.spatial_softargmax(np.zeros((1, 4, 4)), temperature=0.0)

    def test_non_finite_rejected(self):
        stack = np.zeros((1, 4, 4))
        stack[0, 0, 0] = np.inf
        with pytest.raises(ValueError, match="finite"):
            hm.spatial_softargmax(stack)

    def test_batched_torch_input(self):
        rng = np.random.default_rng(3)
        stack = torch.tensor(rng.normal(size=(2, 3, 8, 8)))
        out = hm.spatial_softargmax(stack)
        assert out.shape == (2, 3, 2)
        single = hm.spatial_softargmax(stack[1])
        assert torch.allclose(out[1], single)

    def test_shift_equivariance(self):
        base = 30.0 * hm.render_gaussian([[20.0, 24.0]], 2.0, 48, 48)
        shifted = np.roll(base, shift=(5, -3), axis=(1, 2))
        a = hm.spatial_softargmax(base)[0]
        b = hm.spatial_softargmax(shifted)[0]
        assert np.abs((b - a) - np.array([-3.0, 5.0])).max() < 1e-3

    def test_monotone_sharpening_to_argmax(self):
        rng = np.random.default_rng(5)
        stack = rng.normal(size=(1, 12, 12))
        i, j = np.unravel_index(np.argmax(stack[0]), stack[0].shape)
        target = np.array([j, i], dtype=float)
        dists = []
        for t in (1.0, 4.0, 16.0, 64.0, 256.0):
            out = hm.spatial_softargmax(stack, temperature=t)[0]
            dists.append(np.linalg.norm(out - target))
        assert all(d2 <= d1 + 1e-12 for d1, d2 in zip(dists, dists[1:]))
        assert dists[-1] < 1e-6

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        logits = torch.tensor(rng.normal(size=(1, 8, 8)), requires_grad=True)
        weights = torch.tensor(rng.normal(size=(1, 2)))
        out = (hm.spatial_softargmax(logits) * weights).sum()
        out.backward()
        analytic = logits.grad.numpy().copy()

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
        denom = max(np.abs(numeric).max(), 1e-12)
        assert np.abs(analytic - numeric).max() / denom < 1e-4


class TestRenderGaussian:
    def test_peak_at_point(self):
        stack = hm.render_gaussian([[10.0, 5.0]], 1.0, 32, 32)
        i, j = np.unravel_index(np.argmax(stack[0]), stack[0].shape)
        assert (j, i) == (10, 5)
        assert stack[0, 5, 10] == pytest.approx(1.0)

    def test_large_sigma_is_nearly_flat(self):
        stack = hm.render_gaussian([[3.0, 4.0]], 1e6, 16, 16)
        assert stack[0].max() - stack[0].min() < 1e-6
        out = hm.spatial_softargmax(stack)
        assert np.abs(out[0] - [7.5, 7.5]).max() < 1e-3

    def test_round_trip_with_softargmax(self):
        rng = np.random.default_rng(23)
        pts = rng.uniform(8, 56, size=(10, 2))
        stack = hm.render_gaussian(pts, 2.0, 64, 64)
        out = hm.spatial_softargmax(stack, temperature=30.0)
        assert np.abs(out - pts).max() < 0.5

    def test_sigma_validation(self):
        with pytest.raises(ValueError, match="sigma"):
            hm.render_gaussian([[0, 0]], 0.0, 8, 8)


class TestBlobFormat:
    def test_round_trip_f32(self, tmp_path):
        rng = np.random.default_rng(9)
        stack = rng.normal(size=(5, 12, 7)).astype(np.float32)
        path = tmp_path / "stack.hmap"
        hm.save_heatmaps(stack, path)
        back = hm.load_heatmaps(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, stack)

    def test_round_trip_f64(self, tmp_path):
        rng = np.random.default_rng(10)
        stack = rng.normal(size=(2, 4, 4))
        path = tmp_path / "stack.hmap"
        hm.save_heatmaps(stack, path)
        assert np.array_equal(hm.load_heatmaps(path), stack)

    def test_truncated_blob_rejected(self, tmp_path):
        path = tmp_path / "stack.hmap"
        hm.save_heatmaps(np.zeros((1, 4, 4)), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="truncated"):
            hm.load_heatmaps(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "stack.hmap"
        path.write_bytes(b"nope" + b"\x00" * 32)
        with pytest.raises(ValueError, match="not a heatmap blob"):
            hm.load_heatmaps(path)
