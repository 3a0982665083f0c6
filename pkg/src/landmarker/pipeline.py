"""Full coarse-to-fine inference: global prediction, region refinement, assembly."""
from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from .heatmaps import spatial_softargmax
from .landmarks import NUM_LANDMARKS, REGION_GROUPS, LandmarkSet
from .networks import EYE_CANONICAL_ORDER, EYE_MIRROR_ORDER, ModelBundle
from .regions import (
    DegenerateRegionError,
    REGION_NAMES,
    RegionCrop,
    assemble_full_prediction,
    compute_region_bbox,
    crop_and_fuse_from_lr,
    local_to_global,
)


@dataclass
class FullPrediction:
    """Result of the two-stage pipeline, in the input image's pixel frame."""

    global_landmarks: LandmarkSet
    refined_landmarks: LandmarkSet
    diagnostics: dict = field(default_factory=dict)


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """HxWx3 (uint8 or float in [0,1]) to a float32 (3, H, W) tensor in [0,1]."""
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=-1)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 RGB image, got shape {image.shape}")
    arr = image.astype(np.float32)
    if image.dtype == np.uint8:
        arr = arr / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def resize_to_square(image: np.ndarray, size: int) -> tuple[np.ndarray, tuple[float, float]]:
    """Resize (stretching if necessary) to size x size; returns the per-axis
    factors mapping resized coordinates back to the input frame."""
    h, w = image.shape[:2]
    if (h, w) == (size, size):
        return image, (1.0, 1.0)
    interp = cv2.INTER_AREA if min(h, w) > size else cv2.INTER_CUBIC
    resized = cv2.resize(image, (size, size), interpolation=interp)
    return resized, (w / size, h / size)


def downscale_tensor(image_t: torch.Tensor, size: int) -> torch.Tensor:
    if image_t.shape[-1] == size and image_t.shape[-2] == size:
        return image_t
    return F.interpolate(image_t[None], size=(size, size), mode="area")[0]


def region_forward(bundle: ModelBundle, image_t: torch.Tensor, lr_logits: torch.Tensor,
                   crop: RegionCrop, factor: int) -> tuple[torch.Tensor, list[int]]:
    """Run one region network on its fused crop (RGB + upscaled feature maps).

    Right-eye crops are mirrored into the shared eye net's canonical left
    orientation (channels remapped to the mirrored landmark order) and the
    logits mirrored back. Returns (logits at patch resolution, the global
    landmark index carried by each output channel).
    """
    name = crop.name
    if name == "right_eye_region":
        fused = crop_and_fuse_from_lr(image_t, lr_logits, crop, factor,
                                      channel_indices=EYE_MIRROR_ORDER)
        fused = torch.flip(fused, dims=[-1])
        logits = bundle.eye_net(fused[None])[0]
        logits = torch.flip(logits, dims=[-1])
        return logits, list(EYE_MIRROR_ORDER)
    fused = crop_and_fuse_from_lr(image_t, lr_logits, crop, factor)
    if name == "left_eye_region":
        return bundle.eye_net(fused[None])[0], list(EYE_CANONICAL_ORDER)
    net = bundle.net_for(name)
    return net(fused[None])[0], list(REGION_GROUPS[name])


def compute_crops(global_points_hr: np.ndarray, padding_fraction: float,
                  hr_size: int, patch_size: int,
                  rng: np.random.Generator | None = None) -> dict[str, RegionCrop]:
    """Region crops from coarse landmarks; a generator samples training-time
    padding in [0.25, 0.5], otherwise the fixed fraction is used.
    Degenerate groups are skipped (the caller falls back to global points)."""
    crops = {}
    for name in REGION_NAMES:
        pts = global_points_hr[list(REGION_GROUPS[name])]
        pad = padding_fraction if rng is None else float(rng.uniform(0.25, 0.5))
        try:
            crops[name] = compute_region_bbox(pts, pad, hr_size, hr_size,
                                              name=name, patch_size=patch_size)
        except DegenerateRegionError:
            continue
    return crops


@torch.no_grad()
def forward_full(bundle: ModelBundle, image: np.ndarray,
                 padding_fraction: float = 0.25) -> FullPrediction:
    """Detect 68 landmarks in an RGB image.

    The image is resized to the bundle's high-resolution frame (smaller
    inputs are upscaled), the global network predicts coarse landmarks on
    the downsized copy, and the region networks refine the inner 51 on
    high-resolution crops fused with the global feature maps. Outputs are
    mapped back to the input frame.
    """
    cfg = bundle.config
    h_in, w_in = image.shape[:2]
    hr_image, (sx_back, sy_back) = resize_to_square(image, cfg.hr_size)
    image_t = image_to_tensor(hr_image)
    factor = cfg.hr_size // cfg.patch_size

    lr_t = downscale_tensor(image_t, cfg.patch_size)
    logits = bundle.global_net(lr_t[None])[0]
    if logits.shape != (NUM_LANDMARKS, cfg.patch_size, cfg.patch_size):
        raise RuntimeError(f"global network emitted shape {tuple(logits.shape)}")
    coords_lr = spatial_softargmax(logits, cfg.temperature)
    coords_hr = coords_lr.detach().cpu().numpy().astype(np.float64) * factor

    crops = compute_crops(coords_hr, padding_fraction, cfg.hr_size, cfg.patch_size)

    region_points: dict[str, np.ndarray] = {}
    for name, crop in crops.items():
        region_logits, landmark_ids = region_forward(bundle, image_t, logits, crop, factor)
        local = spatial_softargmax(region_logits, cfg.temperature).detach().cpu().numpy()
        global_pts = local_to_global(local, crop)
        order = np.argsort(landmark_ids)
        region_points[name] = global_pts[order]

    refined_hr, fallbacks = assemble_full_prediction(coords_hr, region_points)

    back = np.array([sx_back, sy_back])
    global_set = LandmarkSet(coords_hr * back, w_in, h_in)
    refined_set = LandmarkSet(refined_hr * back, w_in, h_in)
    diagnostics = {
        "hr_size": cfg.hr_size,
        "scale_back": [sx_back, sy_back],
        "crops": {name: crop.to_dict() for name, crop in crops.items()},
        "fallback_regions": fallbacks,
        "global_hr": coords_hr.tolist(),
    }
    return FullPrediction(global_set, refined_set, diagnostics)
