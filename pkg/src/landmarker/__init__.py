"""Coarse-to-fine facial landmark detection for high-resolution artwork images.

Detection runs a global heatmap network on a downsized image, then refines
the eye, nose, and mouth landmarks with region networks operating on
high-resolution crops fused with the global feature maps. The package also
covers geometric dataset augmentation, training, evaluation, landmark-based
registration, and an annotation service.
"""

__version__ = "0.1.0"

from .landmarks import (
    GROUPS,
    NUM_LANDMARKS,
    LandmarkSet,
    NormalizedLandmarkSet,
    denormalize,
    normalize,
    read_landmarks,
    select_group,
    write_landmarks,
)
from .heatmaps import render_gaussian, spatial_softargmax
from .geometry import (
    AugmentConfig,
    RansacSimilarity,
    SimilarityTransform,
    ThinPlateSpline,
    augment_landmarks,
    fit_similarity,
    ransac_similarity,
    tps_warp_image,
)
from .regions import RegionCrop, compute_region_bbox, local_to_global
from .detector import LandmarkDetector

__all__ = [
    "GROUPS",
    "NUM_LANDMARKS",
    "LandmarkSet",
    "NormalizedLandmarkSet",
    "normalize",
    "denormalize",
    "read_landmarks",
    "write_landmarks",
    "select_group",
    "spatial_softargmax",
    "render_gaussian",
    "ThinPlateSpline",
    "SimilarityTransform",
    "RansacSimilarity",
    "fit_similarity",
    "ransac_similarity",
    "tps_warp_image",
    "AugmentConfig",
    "augment_landmarks",
    "RegionCrop",
    "compute_region_bbox",
    "local_to_global",
    "LandmarkDetector",
]
