"""68-point facial landmark data model, index groups, and file formats.

Landmarks follow the 300-W Multi-PIE markup: jaw 0-16, right brow 17-21,
left brow 22-26, nose 27-35, right eye 36-41, left eye 42-47, mouth 48-67.
Coordinates are continuous sub-pixel values with the origin at the top-left
pixel center ("right"/"left" are the viewer's right/left).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NUM_LANDMARKS = 68

JAW = tuple(range(0, 17))
RIGHT_BROW = tuple(range(17, 22))
LEFT_BROW = tuple(range(22, 27))
NOSE = tuple(range(27, 36))
RIGHT_EYE = tuple(range(36, 42))
LEFT_EYE = tuple(range(42, 48))
MOUTH = tuple(range(48, 68))

BASE_GROUPS = {
    "jaw": JAW,
    "right_brow": RIGHT_BROW,
    "left_brow": LEFT_BROW,
    "nose": NOSE,
    "right_eye": RIGHT_EYE,
    "left_eye": LEFT_EYE,
    "mouth": MOUTH,
}

# Crop regions used by the refinement networks: each eye region includes
# its brow (11 points), nose 9, mouth 20.
REGION_GROUPS = {
    "right_eye_region": RIGHT_BROW + RIGHT_EYE,
    "left_eye_region": LEFT_BROW + LEFT_EYE,
    "nose": NOSE,
    "mouth": MOUTH,
}

INNER_51 = tuple(range(17, 68))
REGISTRATION_41 = NOSE + RIGHT_EYE + LEFT_EYE + MOUTH

GROUPS = {
    "jaw": JAW,
    "brows": RIGHT_BROW + LEFT_BROW,
    "nose": NOSE,
    "left_eye_region": REGION_GROUPS["left_eye_region"],
    "right_eye_region": REGION_GROUPS["right_eye_region"],
    "mouth": MOUTH,
    "inner51": INNER_51,
    "registration41": REGISTRATION_41,
}

# Index permutation under a horizontal flip of the image.
_MIRROR_PAIRS = (
    [(i, 16 - i) for i in range(8)]
    + [(17 + i, 26 - i) for i in range(5)]
    + [(31, 35), (32, 34)]
    + [(36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)]
    + [(48, 54), (49, 53), (50, 52), (55, 59), (56, 58)]
    + [(60, 64), (61, 63), (65, 67)]
)
MIRROR_INDICES = np.arange(NUM_LANDMARKS)
for _a, _b in _MIRROR_PAIRS:
    MIRROR_INDICES[_a], MIRROR_INDICES[_b] = _b, _a
MIRROR_INDICES.setflags(write=False)


class LandmarkFormatError(ValueError):
    """A landmark file is malformed or violates the 68-point contract."""


def as_point_array(points, n_points: int | None = None, name: str = "points") -> np.ndarray:
    """Validate and convert to a float64 (N, 2) array of finite coordinates."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (N, 2), got {arr.shape}")
    if n_points is not None and arr.shape[0] != n_points:
        raise ValueError(f"{name}: expected {n_points} points, found {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr).all(axis=1))[0, 0])
        raise ValueError(f"{name}: non-finite coordinate at index {bad}")
    return arr


@dataclass(frozen=True)
class LandmarkSet:
    """68 ordered points in pixel coordinates plus the image frame size.

    Points may lie outside the image bounds (occluded or warped landmarks
    are legal) but must be finite.
    """

    points: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        object.__setattr__(
            self, "points", as_point_array(self.points, NUM_LANDMARKS, "landmarks")
        )
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError(
                f"image size must be positive, got {self.image_width}x{self.image_height}"
            )

    def group(self, name: str) -> np.ndarray:
        return select_group(self, name)

    def with_points(self, points) -> "LandmarkSet":
        return LandmarkSet(points, self.image_width, self.image_height)


@dataclass(frozen=True)
class NormalizedLandmarkSet:
    """68 points in [-0.5, 0.5] relative to a reference width/height."""

    points: np.ndarray
    ref_width: float
    ref_height: float

    def __post_init__(self):
        object.__setattr__(
            self, "points", as_point_array(self.points, NUM_LANDMARKS, "landmarks")
        )


def normalize_points(points, ref_w: float, ref_h: float) -> np.ndarray:
    """Map pixel coordinates to [-0.5, 0.5]: p / ref - 0.5, per axis."""
    if ref_w <= 0 or ref_h <= 0:
        raise ValueError(f"reference size must be positive, got {ref_w}x{ref_h}")
    pts = np.asarray(points, dtype=np.float64)
    return pts / np.array([ref_w, ref_h]) - 0.5


def denormalize_points(points, ref_w: float, ref_h: float) -> np.ndarray:
    if ref_w <= 0 or ref_h <= 0:
        raise ValueError(f"reference size must be positive, got {ref_w}x{ref_h}")
    pts = np.asarray(points, dtype=np.float64)
    return (pts + 0.5) * np.array([ref_w, ref_h])


def normalize(landmarks: LandmarkSet, ref_w: float, ref_h: float) -> NormalizedLandmarkSet:
    return NormalizedLandmarkSet(
        normalize_points(landmarks.points, ref_w, ref_h), ref_w, ref_h
    )


def denormalize(normalized: NormalizedLandmarkSet, image_width: int, image_height: int) -> LandmarkSet:
    pts = denormalize_points(normalized.points, normalized.ref_width, normalized.ref_height)
    return LandmarkSet(pts, image_width, image_height)


def select_group(landmarks: LandmarkSet, group_name: str) -> np.ndarray:
    """Return the group's points in 300-W order. See GROUPS for valid names."""
    if group_name not in GROUPS:
        raise KeyError(
            f"unknown group {group_name!r}; valid groups: {sorted(GROUPS)}"
        )
    return landmarks.points[list(GROUPS[group_name])]


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def read_pts(path, one_based: bool = True) -> np.ndarray:
    """Read a 300-W ".pts" file and return a (68, 2) array (0-based pixels).

    The 300-W convention stores 1-based coordinates; pass one_based=False
    for files that are already 0-based.
    """
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines()]
    n_declared = None
    for ln in lines:
        if ln.lower().startswith("n_points:"):
            try:
                n_declared = int(ln.split(":", 1)[1])
            except ValueError as exc:
                raise LandmarkFormatError(f"{path}: bad n_points header: {ln!r}") from exc
    if n_declared is not None and n_declared != NUM_LANDMARKS:
        raise LandmarkFormatError(
            f"{path}: expected {NUM_LANDMARKS} points, header declares {n_declared}"
        )
    try:
        start = lines.index("{") + 1
        end = lines.index("}")
    except ValueError as exc:
        raise LandmarkFormatError(f"{path}: missing {{ }} point block") from exc
    rows = []
    for ln in lines[start:end]:
        if not ln:
            continue
        parts = ln.split()
        if len(parts) != 2:
            raise LandmarkFormatError(f"{path}: bad point line {ln!r}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise LandmarkFormatError(f"{path}: bad point line {ln!r}") from exc
    if len(rows) != NUM_LANDMARKS:
        raise LandmarkFormatError(
            f"{path}: expected {NUM_LANDMARKS} points, found {len(rows)}"
        )
    pts = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        bad = int(np.argwhere(~np.isfinite(pts).all(axis=1))[0, 0])
        raise LandmarkFormatError(f"{path}: non-finite coordinate at index {bad}")
    if one_based:
        pts -= 1.0
    return pts


def write_pts(points, path, one_based: bool = True) -> None:
    pts = as_point_array(points, NUM_LANDMARKS)
    if one_based:
        pts = pts + 1.0
    body = "\n".join(f"{x:.6f} {y:.6f}" for x, y in pts)
    Path(path).write_text(
        f"version: 1\nn_points: {NUM_LANDMARKS}\n{{\n{body}\n}}\n"
    )


def read_json_sidecar(path) -> tuple[LandmarkSet, dict]:
    """Read a JSON landmark sidecar; returns the landmarks and the raw record."""
    path = Path(path)
    try:
        record = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LandmarkFormatError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("width", "height", "points"):
        if key not in record:
            raise LandmarkFormatError(f"{path}: missing key {key!r}")
    pts = record["points"]
    if len(pts) != NUM_LANDMARKS:
        raise LandmarkFormatError(
            f"{path}: expected {NUM_LANDMARKS} points, found {len(pts)}"
        )
    for i, pt in enumerate(pts):
        if len(pt) != 2 or not all(isinstance(v, (int, float)) for v in pt):
            raise LandmarkFormatError(f"{path}: bad point at index {i}: {pt!r}")
        if not (math.isfinite(pt[0]) and math.isfinite(pt[1])):
            raise LandmarkFormatError(f"{path}: non-finite coordinate at index {i}")
    lms = LandmarkSet(np.array(pts, dtype=np.float64), record["width"], record["height"])
    return lms, record


def write_json_sidecar(landmarks: LandmarkSet, path, image: str = "", source: str = "manual") -> dict:
    if source not in ("manual", "model", "augmented"):
        raise ValueError(f"source must be manual|model|augmented, got {source!r}")
    record = {
        "image": image,
        "width": landmarks.image_width,
        "height": landmarks.image_height,
        "points": [[float(x), float(y)] for x, y in landmarks.points],
        "source": source,
    }
    Path(path).write_text(json.dumps(record, indent=1))
    return record


def read_landmarks(path, image_width: int | None = None, image_height: int | None = None,
                   one_based: bool = True) -> LandmarkSet:
    """Read landmarks from a ".pts" or JSON sidecar file.

    The pts format does not carry the image size, so it must be supplied.
    """
    path = Path(path)
    if path.suffix.lower() == ".pts":
        pts = read_pts(path, one_based=one_based)
        if image_width is None or image_height is None:
            w = float(np.ceil(pts[:, 0].max())) + 1
            h = float(np.ceil(pts[:, 1].max())) + 1
            image_width = image_width or int(w)
            image_height = image_height or int(h)
        return LandmarkSet(pts, image_width, image_height)
    lms, _ = read_json_sidecar(path)
    return lms


def write_landmarks(landmarks: LandmarkSet, path, image: str = "", source: str = "manual",
                    one_based: bool = True) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pts":
        write_pts(landmarks.points, path, one_based=one_based)
    else:
        write_json_sidecar(landmarks, path, image=image, source=source)
