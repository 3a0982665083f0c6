"""Landmark-driven registration of portrait pairs and comparison overlays."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .geometry import RansacResult, SimilarityTransform, ransac_similarity
from .landmarks import REGISTRATION_41, LandmarkSet

DEFAULT_TRIALS = 2000
DEFAULT_MIN_INLIERS = 8

# distinct default colors for intersection overlays (RGB)
CONTOUR_PALETTE = [(66, 135, 245), (240, 101, 67), (67, 200, 120),
                   (200, 80, 200), (230, 190, 60)]


@dataclass
class RegistrationResult:
    transform: SimilarityTransform
    inlier_mask: np.ndarray
    num_trials: int
    src_points: np.ndarray
    dst_points: np.ndarray
    warped: np.ndarray | None = None

    @property
    def num_inliers(self) -> int:
        return int(self.inlier_mask.sum())

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "inliers": [bool(b) for b in self.inlier_mask],
            "num_inliers": self.num_inliers,
            "num_trials": self.num_trials,
        }


def default_threshold(dst_landmarks: LandmarkSet) -> float:
    """Scale-free inlier threshold: 1% of the target image diagonal."""
    diag = float(np.hypot(dst_landmarks.image_width, dst_landmarks.image_height))
    return 0.01 * diag


def register(src_landmarks: LandmarkSet, dst_landmarks: LandmarkSet,
             src_image: np.ndarray | None = None, threshold_px: float | None = None,
             max_trials: int = DEFAULT_TRIALS, seed: int | None = None,
             min_inliers: int = DEFAULT_MIN_INLIERS) -> RegistrationResult:
    """Fit a source-to-target similarity on the 41 eye/nose/mouth landmarks.

    The transform is estimated robustly with RANSAC; mirrored pairs (prints
    are often flipped relative to paintings) must be mirrored by the caller
    first, registration itself never flips.
    """
    idx = list(REGISTRATION_41)
    src41 = src_landmarks.points[idx]
    dst41 = dst_landmarks.points[idx]
    if threshold_px is None:
        threshold_px = default_threshold(dst_landmarks)
    res: RansacResult = ransac_similarity(
        src41, dst41, threshold_px=threshold_px, max_trials=max_trials,
        seed=seed, min_inliers=min_inliers,
    )
    warped = None
    if src_image is not None:
        warped = warp_to_frame(src_image, res.transform,
                               (dst_landmarks.image_width, dst_landmarks.image_height))
    return RegistrationResult(res.transform, res.inlier_mask, res.num_trials,
                              src41, dst41, warped)


def warp_to_frame(image: np.ndarray, transform: SimilarityTransform,
                  frame_wh: tuple[int, int]) -> np.ndarray:
    return cv2.warpAffine(image, transform.matrix, frame_wh,
                          flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT)


def blend_overlay(target: np.ndarray, warped_source: np.ndarray, alpha: float) -> np.ndarray:
    """Per-pixel alpha * target + (1 - alpha) * warped source."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if target.shape != warped_source.shape:
        raise ValueError(
            f"frame mismatch: {target.shape} vs {warped_source.shape}"
        )
    blend = alpha * target.astype(np.float64) + (1.0 - alpha) * warped_source.astype(np.float64)
    if np.issubdtype(target.dtype, np.integer):
        return np.clip(np.rint(blend), 0, 255).astype(target.dtype)
    return blend.astype(target.dtype)


def draw_matches(src_image: np.ndarray, dst_image: np.ndarray, src_points, dst_points,
                 inlier_mask) -> np.ndarray:
    """Side-by-side view with green inlier / red outlier correspondence lines."""
    hs, ws = src_image.shape[:2]
    hd, wd = dst_image.shape[:2]
    canvas = np.zeros((max(hs, hd), ws + wd, 3), dtype=np.uint8)
    canvas[:hs, :ws] = src_image if src_image.ndim == 3 else src_image[..., None]
    canvas[:hd, ws:] = dst_image if dst_image.ndim == 3 else dst_image[..., None]
    for (sx, sy), (dx, dy), ok in zip(np.asarray(src_points), np.asarray(dst_points),
                                      np.asarray(inlier_mask)):
        color = (0, 200, 0) if ok else (220, 0, 0)
        p1 = (int(round(sx)), int(round(sy)))
        p2 = (int(round(dx)) + ws, int(round(dy)))
        cv2.line(canvas, p1, p2, color, 1, cv2.LINE_AA)
        cv2.circle(canvas, p1, 3, color, -1)
        cv2.circle(canvas, p2, 3, color, -1)
    return canvas


def load_contour_map(image: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Grayscale contour image to a boolean foreground map (threshold at 50%)."""
    gray = image if image.ndim == 2 else cv2.cvtColor(image, cv2.COLOR_RGB2GRAY)
    limit = threshold * (255.0 if np.issubdtype(gray.dtype, np.integer) else 1.0)
    return gray > limit


def intersection_contour_overlay(contour_maps, colors=None,
                                 tolerance_px: int = 1) -> np.ndarray:
    """Multi-contour comparison image.

    Contour pixels covered by at least two maps (within a dilation radius of
    ``tolerance_px``) are drawn white; unmatched contours keep their
    image-specific color; background is black.
    """
    maps = [np.asarray(m).astype(bool) for m in contour_maps]
    if len(maps) < 2:
        raise ValueError(f"need at least 2 contour maps, got {len(maps)}")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ValueError("contour maps must share one frame")
    colors = colors or CONTOUR_PALETTE
    if len(colors) < len(maps):
        raise ValueError(f"need {len(maps)} colors, got {len(colors)}")

    if tolerance_px > 0:
        k = 2 * tolerance_px + 1
        kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (k, k))
        dilated = [cv2.dilate(m.astype(np.uint8), kernel).astype(bool) for m in maps]
    else:
        dilated = maps

    out = np.zeros(shape + (3,), dtype=np.uint8)
    white = np.zeros(shape, dtype=bool)
    for i, own in enumerate(maps):
        others = np.zeros(shape, dtype=bool)
        for j, d in enumerate(dilated):
            if j != i:
                others |= d
        white |= own & others
    for i, own in enumerate(maps):
        out[own & ~white] = colors[i]
    out[white] = (255, 255, 255)
    return out


def save_artifacts(result: RegistrationResult, out_dir, target_image=None,
                   alpha: float = 0.5, src_image=None) -> dict:
    """Write transform.json, matches.png, and overlay.png into a directory."""
    from .datasets import write_image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "transform.json").write_text(json.dumps(result.to_dict(), indent=1))
    written = {"transform": str(out_dir / "transform.json")}
    if target_image is not None and result.warped is not None:
        overlay = blend_overlay(target_image, result.warped, alpha)
        write_image(out_dir / "overlay.png", overlay)
        written["overlay"] = str(out_dir / "overlay.png")
    if src_image is not None and target_image is not None:
        matches = draw_matches(src_image, target_image,
                               result.src_points, result.dst_points, result.inlier_mask)
        write_image(out_dir / "matches.png", matches)
        written["matches"] = str(out_dir / "matches.png")
    return written
