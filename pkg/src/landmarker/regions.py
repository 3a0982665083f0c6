"""Region crops around coarse landmarks and local/global coordinate mapping.

A crop records everything needed to map refined local coordinates back to
the high-resolution frame: global = bbox origin + local * scale, where
scale = bbox size / patch size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .landmarks import NUM_LANDMARKS, REGION_GROUPS, as_point_array

REGION_NAMES = ("left_eye_region", "right_eye_region", "nose", "mouth")
REGION_SIZES = {name: len(idx) for name, idx in REGION_GROUPS.items()}
PATCH_SIZE = 256

PADDING_MIN = 0.25
PADDING_MAX = 0.5


class DegenerateRegionError(ValueError):
    """The landmark group has a zero-extent bounding box."""


@dataclass(frozen=True)
class RegionCrop:
    name: str
    x0: float
    y0: float
    width: float
    height: float
    patch_size: int = PATCH_SIZE
    padding_fraction: float = PADDING_MIN

    def __post_init__(self):
        if self.name not in REGION_GROUPS:
            raise ValueError(f"unknown region {self.name!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"crop must have positive size, got {self.width}x{self.height}")

    @property
    def scale(self) -> tuple[float, float]:
        return (self.width / self.patch_size, self.height / self.patch_size)

    @property
    def num_landmarks(self) -> int:
        return REGION_SIZES[self.name]

    def to_dict(self) -> dict:
        return {
            "name": self.name, "x0": self.x0, "y0": self.y0,
            "width": self.width, "height": self.height,
            "patch_size": self.patch_size, "padding_fraction": self.padding_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionCrop":
        return cls(d["name"], d["x0"], d["y0"], d["width"], d["height"],
                   d.get("patch_size", PATCH_SIZE), d.get("padding_fraction", PADDING_MIN))


def upscale_points(points, factor: float = 4.0) -> np.ndarray:
    """Scale coordinates from the low-resolution frame to the high-resolution one."""
    return as_point_array(points) * factor


def sample_padding(rng: np.random.Generator) -> float:
    """Training-time padding fraction, uniform in [0.25, 0.5]."""
    return float(rng.uniform(PADDING_MIN, PADDING_MAX))


def compute_region_bbox(group_points, padding_fraction: float, image_w: float, image_h: float,
                        name: str = "nose", patch_size: int = PATCH_SIZE) -> RegionCrop:
    """Group bbox expanded per side by padding_fraction of the corresponding
    dimension, squared about its center, then shifted (and shrunk only if
    oversized) to stay within the image."""
    pts = as_point_array(group_points, name="group points")
    if pts.shape[0] < 2:
        raise ValueError(f"need at least 2 points in group, got {pts.shape[0]}")
    if padding_fraction < 0:
        raise ValueError(f"padding_fraction must be non-negative, got {padding_fraction}")
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    w0, h0 = x1 - x0, y1 - y0
    if w0 <= 1e-9 or h0 <= 1e-9:
        raise DegenerateRegionError(
            f"{name}: zero-extent group bbox ({w0:.3g} x {h0:.3g})"
        )
    x0 -= padding_fraction * w0
    x1 += padding_fraction * w0
    y0 -= padding_fraction * h0
    y1 += padding_fraction * h0
    side = max(x1 - x0, y1 - y0)
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    side = min(side, image_w, image_h)
    bx = float(np.clip(cx - side / 2.0, 0.0, image_w - side))
    by = float(np.clip(cy - side / 2.0, 0.0, image_h - side))
    return RegionCrop(name, bx, by, side, side, patch_size, padding_fraction)


def local_to_global(local_points, crop: RegionCrop) -> np.ndarray:
    pts = as_point_array(local_points)
    sx, sy = crop.scale
    return pts * np.array([sx, sy]) + np.array([crop.x0, crop.y0])


def global_to_local(global_points, crop: RegionCrop) -> np.ndarray:
    pts = as_point_array(global_points)
    sx, sy = crop.scale
    return (pts - np.array([crop.x0, crop.y0])) / np.array([sx, sy])


def crop_patch(tensor: torch.Tensor, crop: RegionCrop) -> torch.Tensor:
    """Bilinearly resample a (C, H, W) tensor on the crop's patch grid.

    Output pixel (u, v) samples the input at (x0 + u*sx, y0 + v*sy),
    matching :func:`local_to_global` exactly.
    """
    c, h, w = tensor.shape
    ps = crop.patch_size
    sx, sy = crop.scale
    u = torch.arange(ps, dtype=tensor.dtype, device=tensor.device)
    gx = crop.x0 + u * sx
    gy = crop.y0 + u * sy
    nx = 2.0 * gx / (w - 1) - 1.0
    ny = 2.0 * gy / (h - 1) - 1.0
    grid = torch.stack(torch.meshgrid(ny, nx, indexing="ij")[::-1], dim=-1)[None]
    return F.grid_sample(
        tensor[None], grid, mode="bilinear", padding_mode="border", align_corners=True
    )[0]


def region_channel_indices(name: str) -> list[int]:
    """Global heatmap channels belonging to a region, in 300-W order."""
    return list(REGION_GROUPS[name])


def crop_and_fuse(image_hr: torch.Tensor, feature_maps: torch.Tensor, crop: RegionCrop,
                  channel_indices: list[int] | None = None) -> torch.Tensor:
    """Stack the RGB crop with the region's own feature-map channels.

    ``feature_maps`` is the global network's pre-softmax output upscaled to
    the high-resolution frame. Returns (3 + N_r, patch, patch).
    """
    if image_hr.ndim != 3 or feature_maps.ndim != 3:
        raise ValueError("expected (C, H, W) tensors")
    if image_hr.shape[-2:] != feature_maps.shape[-2:]:
        raise ValueError(
            f"image/feature-map frame mismatch: {tuple(image_hr.shape[-2:])} "
            f"vs {tuple(feature_maps.shape[-2:])}"
        )
    if feature_maps.shape[0] != NUM_LANDMARKS:
        raise ValueError(f"expected {NUM_LANDMARKS} feature channels, got {feature_maps.shape[0]}")
    idx = channel_indices if channel_indices is not None else region_channel_indices(crop.name)
    rgb = crop_patch(image_hr, crop)
    fm = crop_patch(feature_maps[idx], crop)
    return torch.cat([rgb, fm.to(rgb.dtype)], dim=0)


def scale_crop(crop: RegionCrop, factor: float) -> RegionCrop:
    """The same crop expressed in a frame shrunk by ``factor``."""
    return RegionCrop(crop.name, crop.x0 / factor, crop.y0 / factor,
                      crop.width / factor, crop.height / factor,
                      crop.patch_size, crop.padding_fraction)


def crop_and_fuse_from_lr(image_hr: torch.Tensor, lr_feature_maps: torch.Tensor,
                          crop: RegionCrop, factor: int,
                          channel_indices: list[int] | None = None) -> torch.Tensor:
    """crop_and_fuse with the bilinear x``factor`` upscale of the feature
    maps folded into the crop sampling itself.

    Sampling the upscaled maps at (x0 + u*sx) equals sampling the
    low-resolution maps at those coordinates divided by ``factor``, so the
    68 x hr x hr intermediate never has to be materialized.
    """
    if lr_feature_maps.shape[0] != NUM_LANDMARKS:
        raise ValueError(
            f"expected {NUM_LANDMARKS} feature channels, got {lr_feature_maps.shape[0]}"
        )
    idx = channel_indices if channel_indices is not None else region_channel_indices(crop.name)
    rgb = crop_patch(image_hr, crop)
    fm = crop_patch(lr_feature_maps[idx], scale_crop(crop, factor))
    return torch.cat([rgb, fm.to(rgb.dtype)], dim=0)


def upscale_feature_maps(feature_maps: torch.Tensor, factor: int = 4) -> torch.Tensor:
    """Bilinearly upscale (C, H, W) maps so that output pixel q samples the
    input at q / factor, consistent with coordinate upscaling by ``factor``."""
    c, h, w = feature_maps.shape
    oh, ow = h * factor, w * factor
    q = torch.arange(ow, dtype=torch.float32, device=feature_maps.device)
    nx = 2.0 * (q[:ow] / factor) / (w - 1) - 1.0
    ny = 2.0 * (torch.arange(oh, dtype=torch.float32, device=feature_maps.device) / factor) / (h - 1) - 1.0
    grid = torch.stack(torch.meshgrid(ny, nx, indexing="ij")[::-1], dim=-1)[None]
    return F.grid_sample(
        feature_maps[None].float(), grid, mode="bilinear", padding_mode="border",
        align_corners=True,
    )[0].to(feature_maps.dtype)


def assemble_full_prediction(global_points, region_points: dict[str, np.ndarray]) -> tuple[np.ndarray, list[str]]:
    """Combine the global jaw line with refined region points.

    Regions missing from ``region_points`` fall back to the global estimate;
    their names are returned as the fallback list.
    """
    out = as_point_array(global_points, NUM_LANDMARKS, "global points").copy()
    fallbacks = []
    for name in REGION_NAMES:
        if name not in region_points:
            fallbacks.append(name)
            continue
        idx = list(REGION_GROUPS[name])
        pts = as_point_array(region_points[name], len(idx), f"{name} points")
        out[idx] = pts
    return out, fallbacks
