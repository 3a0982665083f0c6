"""Shared fixtures: a procedural face template and synthetic face renderer.

Faces are drawn directly from their landmark positions, so every image
feature coincides exactly with its ground-truth landmark. Rendering is
deterministic given the rng.
"""
import math

import cv2
import numpy as np
import torch

from landmarker.heatmaps import render_gaussian
from landmarker.landmarks import LandmarkSet
from landmarker.networks import BundleConfig, ModelBundle


def face_template() -> np.ndarray:
    """A plausible 68-point layout in a 256x256 frame."""
    pts = np.zeros((68, 2))
    for i in range(17):
        ang = math.pi * i / 16
        pts[i] = (128 - 70 * math.cos(ang), 120 + 95 * math.sin(ang))
    for k in range(5):
        pts[17 + k] = (75 + 10 * k, 95 - 6 * math.sin(math.pi * k / 4))
        pts[22 + k] = (141 + 10 * k, 95 - 6 * math.sin(math.pi * (4 - k) / 4))
    for k in range(4):
        pts[27 + k] = (128 + 0.6 * k, 112 + 11 * k)
    for k in range(5):
        pts[31 + k] = (112 + 8 * k, 155 + (0 if k in (0, 4) else 3))
    eye = np.array([[-13, 0], [-6, -4], [3, -4], [10, 0], [3, 4], [-6, 4]], float)
    pts[36:42] = eye + [95, 115]
    pts[42:48] = eye * [-1, 1] + [161, 115]
    outer = [(-28, 0), (-20, -6), (-9, -9), (0, -8), (9, -9), (20, -6), (28, 0),
             (20, 7), (9, 10), (0, 11), (-9, 10), (-20, 7)]
    inner = [(-22, 0), (-10, -3), (0, -2), (10, -3), (22, 0), (10, 3), (0, 4), (-10, 3)]
    pts[48:60] = np.array(outer, float) + [128, 185]
    pts[60:68] = np.array(inner, float) + [128, 185]
    return pts


def _poly(points, scale):
    return np.round(np.asarray(points) * scale).astype(np.int32)


def render_face(points_256: np.ndarray, size: int = 1024,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Paint a stylized portrait whose features sit exactly on the landmarks."""
    rng = rng or np.random.default_rng(0)
    s = size / 256.0
    pts = points_256 * s
    lw = max(1, round(2 * s))

    base = np.array([172, 156, 128]) + rng.integers(-25, 25, size=3)
    img = np.full((size, size, 3), base, dtype=np.float64)
    img += rng.normal(0, 12, size=img.shape)

    jaw = pts[:17]
    axis = jaw[16] - jaw[0]
    axis /= np.linalg.norm(axis)
    origin = jaw[0]
    rel = jaw - origin
    proj = rel @ axis
    forehead = origin + np.outer(proj, axis) - (rel - np.outer(proj, axis)) * 0.75
    skin_poly = np.vstack([jaw, forehead[::-1][1:-1]])
    skin = np.array([206, 178, 144]) + rng.integers(-20, 20, size=3)
    cv2.fillPoly(img, [np.round(skin_poly).astype(np.int32)], skin.tolist())

    dark = (int(68 + rng.integers(0, 25)), int(48 + rng.integers(0, 20)), 36)
    cv2.polylines(img, [np.round(jaw).astype(np.int32)], False, dark, lw)

    for sl in (slice(17, 22), slice(22, 27)):
        cv2.polylines(img, [np.round(pts[sl]).astype(np.int32)], False, dark, lw * 2)

    cv2.polylines(img, [np.round(pts[27:31]).astype(np.int32)], False, (120, 90, 70), lw)
    cv2.polylines(img, [np.round(pts[31:36]).astype(np.int32)], False, (120, 90, 70), lw)

    for sl in (slice(36, 42), slice(42, 48)):
        eye = pts[sl]
        cv2.fillPoly(img, [np.round(eye).astype(np.int32)], (235, 233, 228))
        cv2.polylines(img, [np.round(eye).astype(np.int32)], True, dark, lw)
        center = eye.mean(axis=0)
        r = max(2, int((eye[:, 0].max() - eye[:, 0].min()) / 4.5))
        cv2.circle(img, tuple(np.round(center).astype(int)), r, (90, 70, 40), -1)
        cv2.circle(img, tuple(np.round(center).astype(int)), max(1, r // 2), (20, 16, 12), -1)

    cv2.fillPoly(img, [np.round(pts[48:60]).astype(np.int32)], (150, 70, 60))
    cv2.polylines(img, [np.round(pts[48:60]).astype(np.int32)], True, (96, 40, 36), lw)
    cv2.polylines(img, [np.round(pts[60:68]).astype(np.int32)], True, (110, 50, 45), lw)

    img = cv2.GaussianBlur(img, (3, 3), 0)
    return np.clip(img, 0, 255).astype(np.uint8)


def jittered_template(rng: np.random.Generator) -> np.ndarray:
    """Template under a random small similarity + per-point noise (256 frame)."""
    pts = face_template()
    theta = rng.uniform(-0.1, 0.1)
    scale = rng.uniform(0.9, 1.08)
    shift = rng.uniform(-10, 10, size=2)
    c, s = math.cos(theta) * scale, math.sin(theta) * scale
    center = pts.mean(axis=0)
    rot = np.array([[c, -s], [s, c]])
    return (pts - center) @ rot.T + center + shift


def make_face_set(n: int, size: int = 1024, seed: int = 0):
    """n rendered faces with ground truth, as (image, LandmarkSet) pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        pts = jittered_template(rng) * (size / 256.0)
        marks = LandmarkSet(pts, size, size)
        out.append((render_face(pts / (size / 256.0), size, rng), marks))
    return out


class StubGlobalNet:
    """Oracle network: ignores its input, emits Gaussian logits at fixed
    ground-truth locations in the low-resolution frame."""

    def __init__(self, gt_hr: np.ndarray, factor: int = 4, patch: int = 256,
                 gain: float = 60.0, sigma: float = 2.0):
        stack = render_gaussian(gt_hr / factor, sigma, patch, patch) * gain
        self.logits = torch.tensor(stack, dtype=torch.float32)

    def __call__(self, x):
        return self.logits[None].expand(x.shape[0], -1, -1, -1)

    def parameters(self):
        return []


class StubRegionNet:
    """Oracle region network: passes its fused feature channels through."""

    def __call__(self, fused):
        return fused[:, 3:]

    def parameters(self):
        return []


def stub_bundle(gt_hr: np.ndarray, patch: int = 256, hr: int = 1024) -> ModelBundle:
    cfg = BundleConfig(base_width=1, num_blocks=0, patch_size=patch, hr_size=hr)
    return ModelBundle(
        StubGlobalNet(gt_hr, factor=hr // patch, patch=patch),
        StubRegionNet(), StubRegionNet(), StubRegionNet(), cfg,
    )
