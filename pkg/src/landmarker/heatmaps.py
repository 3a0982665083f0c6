"""Differentiable coordinate extraction from heatmaps plus rendering helpers.

Convention: heatmap cell (i=row, j=col) has coordinates (x=j, y=i), no
half-pixel offset. Heatmap stacks are (C, H, W) or (B, C, H, W) arrays of
pre-softmax logits.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

_MAGIC = b"HMAP"
_DTYPES = {0: np.float32, 1: np.float64}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def spatial_softargmax(stack, temperature: float = 1.0):
    """Softmax over all cells of each channel, then the coordinate expectation.

    Accepts a torch tensor (gradients flow through) or a numpy array
    (returned as numpy). Input shape (..., H, W); output (..., 2) as (x, y)
    pixel coordinates.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    is_numpy = not torch.is_tensor(stack)
    t = torch.as_tensor(np.asarray(stack, dtype=np.float64)) if is_numpy else stack
    if t.ndim < 2:
        raise ValueError(f"heatmap stack must have shape (..., H, W), got {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise ValueError("heatmap stack contains non-finite values")
    h, w = t.shape[-2], t.shape[-1]
    flat = (t * temperature).reshape(*t.shape[:-2], h * w)
    prob = torch.softmax(flat, dim=-1)
    xs = torch.arange(w, dtype=t.dtype, device=t.device)
    ys = torch.arange(h, dtype=t.dtype, device=t.device)
    grid_x = xs.repeat(h)                      # x of each flattened cell
    grid_y = ys.repeat_interleave(w)           # y of each flattened cell
    coords = torch.stack([(prob * grid_x).sum(-1), (prob * grid_y).sum(-1)], dim=-1)
    return coords.numpy() if is_numpy else coords


def render_gaussian(points, sigma: float, height: int, width: int) -> np.ndarray:
    """Render one Gaussian bump per point: exp(-||q - p||^2 / (2 sigma^2)).

    Returns a (C, H, W) float64 stack; peak value 1 at the point itself.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    dx = xs[None, None, :] - pts[:, 0, None, None]
    dy = ys[None, :, None] - pts[:, 1, None, None]
    return np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))


def save_heatmaps(stack, path) -> None:
    """Write a (C, H, W) stack as a small binary blob (header + row-major data)."""
    arr = np.ascontiguousarray(stack)
    if arr.ndim != 3:
        raise ValueError(f"expected (C, H, W) stack, got shape {arr.shape}")
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    header = _MAGIC + struct.pack(
        "<BBIII", 1, _DTYPE_CODES[arr.dtype], *arr.shape
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def load_heatmaps(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a heatmap blob")
    version, code, c, h, w = struct.unpack("<BBIII", raw[4:18])
    if version != 1 or code not in _DTYPES:
        raise ValueError(f"{path}: unsupported blob version/dtype ({version}, {code})")
    dtype = np.dtype(_DTYPES[code])
    expected = c * h * w * dtype.itemsize
    data = raw[18:]
    if len(data) != expected:
        raise ValueError(f"{path}: truncated blob ({len(data)} of {expected} bytes)")
    return np.frombuffer(data, dtype=dtype).reshape(c, h, w).copy()
