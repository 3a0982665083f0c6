"""Thin-plate-spline fields, similarity transforms, RANSAC, and landmark augmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import cv2
import numpy as np
from sklearn.base import BaseEstimator

from .landmarks import (
    BASE_GROUPS,
    LandmarkSet,
    as_point_array,
)


class DegenerateGeometryError(ValueError):
    """Control-point configuration is singular (duplicates, collinear, collapsed)."""


class RegistrationFailure(RuntimeError):
    """RANSAC could not find a transform with enough inliers."""


# ---------------------------------------------------------------------------
# Thin-plate spline
# ---------------------------------------------------------------------------

def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    # U(r) = r^2 log r^2, with U(0) = 0 (clamping the log argument makes
    # the r2 = 0 product exactly zero)
    return r2 * np.log(np.maximum(r2, np.finfo(np.float64).tiny))


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # exact form, used on the small K x K fit system
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _pairwise_sq_dists_fast(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # matmul form for large query sets (dense warp grids); clamp the
    # cancellation noise so the kernel's log never sees negatives
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


class ThinPlateSpline(BaseEstimator):
    """2-D thin-plate-spline mapping fitted from control-point pairs.

    With regularization 0 the fitted map interpolates the control points
    exactly; larger values trade exactness for smoothness. The fitted map
    sends ``control_src_`` to (approximately) ``control_dst_``; evaluate it
    with :meth:`transform`.

    Attributes after fit: ``affine_`` (3, 2) and ``weights_`` (K, 2), the
    affine part and kernel weights per output axis. The weights satisfy the
    TPS side conditions (zero sum and zero first moments).
    """

    def __init__(self, regularization: float = 0.0):
        self.regularization = regularization

    def fit(self, src, dst):
        src = as_point_array(src, name="src")
        dst = as_point_array(dst, name="dst")
        if src.shape != dst.shape:
            raise ValueError(f"src/dst shape mismatch: {src.shape} vs {dst.shape}")
        k = src.shape[0]
        if k < 3:
            raise DegenerateGeometryError(f"need at least 3 control points, got {k}")
        if self.regularization < 0:
            raise ValueError("regularization must be non-negative")

        d2 = _pairwise_sq_dists(src, src)
        off_diag = d2[~np.eye(k, dtype=bool)]
        if off_diag.min() == 0.0:
            raise DegenerateGeometryError("duplicate control points")
        centered = src - src.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-9 * max(1.0, np.abs(src).max())) < 2:
            raise DegenerateGeometryError("control points are collinear")

        kernel = _tps_kernel(d2) + self.regularization * np.eye(k)
        p = np.hstack([np.ones((k, 1)), src])
        system = np.zeros((k + 3, k + 3))
        system[:k, :k] = kernel
        system[:k, k:] = p
        system[k:, :k] = p.T
        rhs = np.zeros((k + 3, 2))
        rhs[:k] = dst
        try:
            solution = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError as exc:
            raise DegenerateGeometryError(f"singular TPS system: {exc}") from exc
        self.control_src_ = src
        self.control_dst_ = dst
        self.weights_ = solution[:k]
        self.affine_ = solution[k:]
        return self

    def transform(self, points) -> np.ndarray:
        """Evaluate the fitted map at query points; returns mapped positions."""
        if not hasattr(self, "weights_"):
            raise RuntimeError("ThinPlateSpline must be fitted before transform")
        pts = as_point_array(points, name="points")
        out = np.empty_like(pts)
        # chunked so dense warp grids (millions of queries) stay cache-sized
        for start in range(0, pts.shape[0], 65536):
            block = pts[start : start + 65536]
            u = _tps_kernel(_pairwise_sq_dists_fast(block, self.control_src_))
            p = np.hstack([np.ones((block.shape[0], 1)), block])
            out[start : start + 65536] = p @ self.affine_ + u @ self.weights_
        return out

    def displacement(self, points) -> np.ndarray:
        pts = as_point_array(points, name="points")
        return self.transform(pts) - pts


def tps_fit(src_points, dst_points, regularization: float = 0.0) -> ThinPlateSpline:
    return ThinPlateSpline(regularization=regularization).fit(src_points, dst_points)


def _interp_coarse_field(coarse: np.ndarray, stride: int, h: int, w: int) -> np.ndarray:
    """Bilinearly upsample a field sampled every ``stride`` pixels to (h, w, 2).

    Exact for affine fields, so identity and constant-offset warps stay
    pixel-perfect.
    """
    kx, fx = np.divmod(np.arange(w), stride)
    ky, fy = np.divmod(np.arange(h), stride)
    fx = (fx / stride)[None, :, None]
    fy = (fy / stride)[:, None, None]
    cx = coarse[:, kx] * (1.0 - fx) + coarse[:, kx + 1] * fx
    return cx[ky] * (1.0 - fy) + cx[ky + 1] * fy


def tps_warp_image(image: np.ndarray, field: ThinPlateSpline,
                   grid_stride: int = 4) -> np.ndarray:
    """Backward-warp an image through a TPS field.

    Output pixel q samples the input at ``field.transform(q)``, so the field
    must be fitted in the inverse (destination to source) direction.
    Out-of-bounds samples replicate the image edge. The field is evaluated
    every ``grid_stride`` pixels and interpolated in between (TPS fields are
    smooth); pass 1 to evaluate it densely.
    """
    if image.size == 0:
        raise ValueError("image is empty")
    if grid_stride < 1:
        raise ValueError("grid_stride must be >= 1")
    h, w = image.shape[:2]
    if grid_stride == 1:
        xs, ys = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
        grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
        mapped = field.transform(grid).reshape(h, w, 2)
    else:
        nx = (w - 1) // grid_stride + 2
        ny = (h - 1) // grid_stride + 2
        gx = np.arange(nx, dtype=np.float64) * grid_stride
        gy = np.arange(ny, dtype=np.float64) * grid_stride
        xs, ys = np.meshgrid(gx, gy)
        coarse = field.transform(np.stack([xs.ravel(), ys.ravel()], axis=1))
        mapped = _interp_coarse_field(coarse.reshape(ny, nx, 2), grid_stride, h, w)
    map_x = np.ascontiguousarray(mapped[..., 0], dtype=np.float32)
    map_y = np.ascontiguousarray(mapped[..., 1], dtype=np.float32)
    return cv2.remap(
        image, map_x, map_y, interpolation=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_REPLICATE,
    )


# ---------------------------------------------------------------------------
# Similarity (4-DOF partial affine) transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimilarityTransform:
    """Rotation + uniform scale + translation; no shear, aspect ratio kept."""

    theta: float
    scale: float
    tx: float
    ty: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def matrix(self) -> np.ndarray:
        c = self.scale * math.cos(self.theta)
        s = self.scale * math.sin(self.theta)
        return np.array([[c, -s, self.tx], [s, c, self.ty]])

    def apply(self, points) -> np.ndarray:
        pts = as_point_array(points, name="points")
        m = self.matrix
        return pts @ m[:, :2].T + m[:, 2]

    def inverse(self) -> "SimilarityTransform":
        c = complex(math.cos(self.theta), math.sin(self.theta)) * self.scale
        t = complex(self.tx, self.ty)
        ci = 1.0 / c
        ti = -ci * t
        return SimilarityTransform(math.atan2(ci.imag, ci.real), abs(ci), ti.real, ti.imag)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equivalent to applying ``other`` first, then ``self``."""
        c1 = complex(math.cos(other.theta), math.sin(other.theta)) * other.scale
        c2 = complex(math.cos(self.theta), math.sin(self.theta)) * self.scale
        c = c2 * c1
        t = c2 * complex(other.tx, other.ty) + complex(self.tx, self.ty)
        return SimilarityTransform(math.atan2(c.imag, c.real), abs(c), t.real, t.imag)

    def to_dict(self) -> dict:
        return {"theta": self.theta, "scale": self.scale, "tx": self.tx, "ty": self.ty,
                "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTransform":
        return cls(d["theta"], d["scale"], d["tx"], d["ty"])

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(0.0, 1.0, 0.0, 0.0)


def fit_similarity(src, dst) -> SimilarityTransform:
    """Least-squares 4-DOF transform minimizing sum ||T(src_i) - dst_i||^2.

    Closed form via the centered cross-covariance, treating points as
    complex numbers.
    """
    src = as_point_array(src, name="src")
    dst = as_point_array(dst, name="dst")
    if src.shape != dst.shape:
        raise ValueError(f"src/dst shape mismatch: {src.shape} vs {dst.shape}")
    if src.shape[0] < 2:
        raise DegenerateGeometryError(f"need at least 2 points, got {src.shape[0]}")
    s = src[:, 0] + 1j * src[:, 1]
    d = dst[:, 0] + 1j * dst[:, 1]
    ms, md = s.mean(), d.mean()
    s0, d0 = s - ms, d - md
    denom = float(np.sum(s0.real**2 + s0.imag**2))
    if denom == 0.0:
        raise DegenerateGeometryError("all source points coincide")
    c = np.sum(d0 * s0.conj()) / denom
    if abs(c) == 0.0:
        raise DegenerateGeometryError("degenerate fit: zero scale")
    t = md - c * ms
    return SimilarityTransform(float(np.angle(c)), float(abs(c)), float(t.real), float(t.imag))


@dataclass(frozen=True)
class RansacResult:
    transform: SimilarityTransform
    inlier_mask: np.ndarray
    num_trials: int

    @property
    def num_inliers(self) -> int:
        return int(self.inlier_mask.sum())


class RansacSimilarity(BaseEstimator):
    """Robust similarity fit from 2-point minimal samples.

    Samples ``max_trials`` random pairs, scores each exact 2-point transform
    by its inlier count over all correspondences, refits on the best support,
    and recomputes the inlier mask under the refit transform. Deterministic
    given ``random_state``: the trial subsets are drawn up front from a single
    seeded generator, so trial i's subset is a pure function of (seed, i).
    """

    def __init__(self, threshold_px: float = 3.0, max_trials: int = 2000,
                 min_inliers: int = 8, random_state: int | None = None):
        self.threshold_px = threshold_px
        self.max_trials = max_trials
        self.min_inliers = min_inliers
        self.random_state = random_state

    def fit(self, src, dst):
        src = as_point_array(src, name="src")
        dst = as_point_array(dst, name="dst")
        if src.shape != dst.shape:
            raise ValueError(f"src/dst shape mismatch: {src.shape} vs {dst.shape}")
        n = src.shape[0]
        if n < 2:
            raise DegenerateGeometryError(f"need at least 2 correspondences, got {n}")
        if self.threshold_px <= 0:
            raise ValueError("threshold_px must be positive")

        s = src[:, 0] + 1j * src[:, 1]
        d = dst[:, 0] + 1j * dst[:, 1]
        rng = np.random.default_rng(self.random_state)
        i1 = rng.integers(0, n, self.max_trials)
        i2 = rng.integers(0, n - 1, self.max_trials)
        i2 = np.where(i2 >= i1, i2 + 1, i2)

        ds = s[i2] - s[i1]
        valid = ds != 0
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(valid, (d[i2] - d[i1]) / np.where(valid, ds, 1.0), 0.0)
        valid &= np.abs(c) > 0
        t = d[i1] - c * s[i1]

        resid = np.abs(c[:, None] * s[None, :] + t[:, None] - d[None, :])
        support = (resid <= self.threshold_px).sum(axis=1)
        support[~valid] = -1
        best = int(np.argmax(support))
        if support[best] < max(self.min_inliers, 2):
            raise RegistrationFailure(
                f"no transform with >= {self.min_inliers} inliers "
                f"(best support {max(int(support[best]), 0)} of {n})"
            )
        hypothesis_mask = resid[best] <= self.threshold_px
        transform = fit_similarity(src[hypothesis_mask], dst[hypothesis_mask])
        final_resid = np.linalg.norm(transform.apply(src) - dst, axis=1)
        self.transform_ = transform
        self.inlier_mask_ = final_resid <= self.threshold_px
        self.n_trials_ = self.max_trials
        return self

    def predict(self, points) -> np.ndarray:
        if not hasattr(self, "transform_"):
            raise RuntimeError("RansacSimilarity must be fitted before predict")
        return self.transform_.apply(points)

    @property
    def result_(self) -> RansacResult:
        return RansacResult(self.transform_, self.inlier_mask_, self.n_trials_)


def ransac_similarity(src, dst, threshold_px: float, max_trials: int = 2000,
                      seed: int | None = None, min_inliers: int = 8) -> RansacResult:
    est = RansacSimilarity(threshold_px=threshold_px, max_trials=max_trials,
                           min_inliers=min_inliers, random_state=seed)
    return est.fit(src, dst).result_


# ---------------------------------------------------------------------------
# Geometric landmark augmentation
# ---------------------------------------------------------------------------

# Groups that may be shifted/scaled independently about their centroid.
MOVABLE_GROUPS = ("right_eye", "left_eye", "right_brow", "left_brow", "nose", "mouth")


@dataclass(frozen=True)
class AugmentConfig:
    """Magnitudes for random geometric landmark augmentation.

    Group shifts are uniform in +-(group_shift_frac x face bbox diagonal);
    group scales and per-axis whole-face stretch are uniform in their ranges.
    """

    group_shift_frac: float = 0.02
    group_scale_range: tuple[float, float] = (0.93, 1.07)
    stretch_range: tuple[float, float] = (0.92, 1.08)
    groups: tuple[str, ...] = MOVABLE_GROUPS
    border_anchors: bool = True
    max_retries: int = 5

    def identity(self) -> "AugmentConfig":
        return replace(self, group_shift_frac=0.0,
                       group_scale_range=(1.0, 1.0), stretch_range=(1.0, 1.0))


@dataclass(frozen=True)
class AugmentResult:
    landmarks: LandmarkSet
    field: ThinPlateSpline       # fitted displaced -> original, for backward warping


def displace_groups(points: np.ndarray, moves: dict[str, tuple], stretch=(1.0, 1.0)) -> np.ndarray:
    """Apply per-group (shift, scale) about each group centroid, then a
    whole-face per-axis stretch about the face bbox center."""
    out = as_point_array(points).copy()
    for name, (shift, scale) in moves.items():
        idx = list(BASE_GROUPS[name])
        centroid = out[idx].mean(axis=0)
        out[idx] = centroid + (out[idx] - centroid) * scale + np.asarray(shift, dtype=np.float64)
    center = (out.min(axis=0) + out.max(axis=0)) / 2.0
    out = center + (out - center) * np.asarray(stretch, dtype=np.float64)
    return out


def _border_anchor_points(width: float, height: float) -> np.ndarray:
    xs = [0.0, width / 2.0, width - 1.0]
    ys = [0.0, height / 2.0, height - 1.0]
    return np.array([(x, y) for y in ys for x in xs if not (x == width / 2.0 and y == height / 2.0)])


def augment_landmarks(landmarks: LandmarkSet, config: AugmentConfig = AugmentConfig(),
                      seed: int | None = None) -> AugmentResult:
    """Randomly displace landmark groups and fit the TPS field for warping.

    The field is fitted displaced -> original so that
    :func:`tps_warp_image` can be applied directly; the returned landmark
    set holds the displaced (forward) positions, consistent with the warped
    image. Degenerate displacement draws are retried up to
    ``config.max_retries`` times.
    """
    rng = np.random.default_rng(seed)
    pts = landmarks.points
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    anchors = (
        _border_anchor_points(landmarks.image_width, landmarks.image_height)
        if config.border_anchors else np.zeros((0, 2))
    )

    last_error = None
    for _ in range(max(1, config.max_retries)):
        moves = {}
        for name in config.groups:
            shift = rng.uniform(-1.0, 1.0, size=2) * config.group_shift_frac * diag
            scale = rng.uniform(*config.group_scale_range)
            moves[name] = (shift, scale)
        stretch = rng.uniform(*config.stretch_range, size=2)
        displaced = displace_groups(pts, moves, stretch)
        try:
            src = np.vstack([displaced, anchors])
            dst = np.vstack([pts, anchors])
            fld = ThinPlateSpline().fit(src, dst)
        except DegenerateGeometryError as exc:
            last_error = exc
            continue
        return AugmentResult(landmarks.with_points(displaced), fld)
    raise DegenerateGeometryError(
        f"augmentation produced degenerate controls after {config.max_retries} retries: {last_error}"
    )
