"""Dataset manifests, synthetic-set assembly, and split loading.

Stylization is externalized: any command mapping an input image file to an
output image file (`<cmd> <in> <out>`, exit 0) can be plugged in; the
identity stylizer (no command) keeps the pipeline hermetic.
"""
from __future__ import annotations

import csv
import shlex
import subprocess
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import cv2
import numpy as np

from .geometry import AugmentConfig, augment_landmarks, tps_warp_image
from .landmarks import LandmarkSet, read_landmarks, write_json_sidecar

MANIFEST_FIELDS = ["image", "landmarks", "split", "provenance", "source"]
SPLITS = ("train", "val", "test")
PROVENANCES = (
    "real_painting", "real_print",
    "syn_adain_painting", "syn_adain_print",
    "syn_cyclegan_painting", "syn_cyclegan_print",
    "augmented",
)
TARGET_SIZE = 1024


class ManifestError(ValueError):
    """Manifest file is malformed or references missing/conflicting entries."""


class StylizerError(RuntimeError):
    """The external stylizer command failed."""


@dataclass(frozen=True)
class ManifestRow:
    image: str
    landmarks: str
    split: str
    provenance: str
    source: str = ""

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")
        if self.provenance not in PROVENANCES:
            raise ManifestError(f"unknown provenance {self.provenance!r}")


def write_manifest(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))


def read_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise ManifestError(
                f"{path}: bad header {reader.fieldnames}, expected {MANIFEST_FIELDS}"
            )
        try:
            return [ManifestRow(**row) for row in reader]
        except TypeError as exc:
            raise ManifestError(f"{path}: malformed row: {exc}") from exc


def validate_manifest(rows, root) -> None:
    """Single pass checking referential integrity and split disjointness."""
    root = Path(root)
    seen: dict[str, str] = {}
    for row in rows:
        for rel in (row.image, row.landmarks):
            if not (root / rel).exists():
                raise ManifestError(f"missing file: {rel}")
        prev = seen.get(row.image)
        if prev is not None and prev != row.split:
            raise ManifestError(
                f"{row.image}: appears in splits {prev!r} and {row.split!r}"
            )
        seen[row.image] = row.split


def split_counts(rows) -> dict[str, dict[str, int]]:
    """Per-split, per-provenance image counts (the dataset summary shape)."""
    table: dict[str, dict[str, int]] = {s: {} for s in SPLITS}
    for row in rows:
        table[row.split][row.provenance] = table[row.split].get(row.provenance, 0) + 1
    return table


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise IOError(f"unreadable image: {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_image(path, image: np.ndarray) -> None:
    ok = cv2.imwrite(str(path), cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
    if not ok:
        raise IOError(f"could not write image: {path}")


def resize_with_landmarks(image: np.ndarray, landmarks: LandmarkSet,
                          target: int = TARGET_SIZE) -> tuple[np.ndarray, LandmarkSet]:
    """Pad to square about the center, then scale to target x target,
    transforming the landmarks consistently."""
    h, w = image.shape[:2]
    if (h, w) == (target, target):
        return image, landmarks
    side = max(h, w)
    pad_x, pad_y = (side - w) // 2, (side - h) // 2
    padded = np.zeros((side, side) + image.shape[2:], dtype=image.dtype)
    padded[pad_y : pad_y + h, pad_x : pad_x + w] = image
    factor = target / side
    if side > target:
        # area filtering for downscales; the half-pixel drift vs. the pure
        # scale map below is under 0.5 px and shrinks with the factor
        resized = cv2.resize(padded, (target, target), interpolation=cv2.INTER_AREA)
    else:
        # pure-scale map x -> factor * x, exactly matching the landmark transform
        m = np.array([[factor, 0.0, 0.0], [0.0, factor, 0.0]])
        resized = cv2.warpAffine(padded, m, (target, target), flags=cv2.INTER_LINEAR)
    pts = (landmarks.points + np.array([pad_x, pad_y])) * factor
    return resized, LandmarkSet(pts, target, target)


class LandmarkDataset:
    """Lazy (image, LandmarkSet) pairs for one split, resized to 1024."""

    def __init__(self, rows, root, split: str | None = None, target: int = TARGET_SIZE):
        self.root = Path(root)
        self.rows = [r for r in rows if split is None or r.split == split]
        self.target = target

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i: int):
        row = self.rows[i]
        image = read_image(self.root / row.image)
        marks = read_landmarks(self.root / row.landmarks,
                               image.shape[1], image.shape[0])
        if marks.image_width != image.shape[1] or marks.image_height != image.shape[0]:
            raise ManifestError(
                f"{row.image}: landmark frame {marks.image_width}x{marks.image_height} "
                f"does not match image {image.shape[1]}x{image.shape[0]}"
            )
        return resize_with_landmarks(image, marks, self.target)


def load_split(manifest_path, split: str):
    rows = read_manifest(manifest_path)
    root = Path(manifest_path).parent
    validate_manifest(rows, root)
    return LandmarkDataset(rows, root, split)


# ---------------------------------------------------------------------------
# Synthetic dataset assembly
# ---------------------------------------------------------------------------

def run_stylizer(command, in_path, out_path) -> None:
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    argv += [str(in_path), str(out_path)]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout or "").strip()[-500:]
        raise StylizerError(
            f"stylizer exited with {proc.returncode}: {' '.join(argv)}\n{tail}"
        )
    if not Path(out_path).exists():
        raise StylizerError(f"stylizer produced no output file: {out_path}")


def build_synthetic(items, out_dir, stylizer_command=None,
                    aug_config: AugmentConfig = AugmentConfig(),
                    per_image: int = 1, seed: int = 0, split: str = "train",
                    provenance: str = "augmented", source: str = "") -> list[ManifestRow]:
    """Stylize and geometrically augment base images into manifest rows.

    ``items`` is a sequence of (image path, landmark path). Each base image
    is scaled to 1024, stylized (identity when no command is given), then
    warped ``per_image`` times through randomly sampled landmark
    displacements. Deterministic given ``seed``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for item_idx, (image_path, landmark_path) in enumerate(items):
        image = read_image(image_path)
        marks = read_landmarks(landmark_path, image.shape[1], image.shape[0])
        image, marks = resize_with_landmarks(image, marks)

        if stylizer_command:
            with tempfile.TemporaryDirectory() as tmp:
                tmp_in = Path(tmp) / "in.png"
                tmp_out = Path(tmp) / "out.png"
                write_image(tmp_in, image)
                run_stylizer(stylizer_command, tmp_in, tmp_out)
                image = read_image(tmp_out)
                if image.shape[:2] != (TARGET_SIZE, TARGET_SIZE):
                    image = cv2.resize(image, (TARGET_SIZE, TARGET_SIZE),
                                       interpolation=cv2.INTER_CUBIC)

        stem = Path(image_path).stem
        for k in range(per_image):
            result = augment_landmarks(marks, aug_config,
                                       seed=np.random.SeedSequence([seed, item_idx, k]))
            warped = tps_warp_image(image, result.field)
            img_name = f"{stem}_aug{k:03d}.png"
            lm_name = f"{stem}_aug{k:03d}.json"
            write_image(out_dir / img_name, warped)
            write_json_sidecar(result.landmarks, out_dir / lm_name,
                               image=img_name, source="augmented")
            rows.append(ManifestRow(img_name, lm_name, split, provenance, source))
    return rows
