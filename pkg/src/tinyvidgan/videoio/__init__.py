"""Clip container I/O and the camera-stabilization ingestion pipeline."""

from .clipio import (
    Clip,
    ClipCRCError,
    ClipError,
    ClipFormatError,
    ClipTruncationError,
    read_clip,
    write_clip,
)
from .ppm import read_ppm, write_ppm
from .sift import Keypoint, detect_keypoints, match_descriptors
from .stabilize import (
    StabilizationResult,
    ingest_manifest,
    segment_and_normalize,
    stabilize,
)
from .transform import (
    EstimationFailed,
    RansacResult,
    SimilarityTransform,
    estimate_transform_ransac,
    solve_similarity,
)

__all__ = [
    "Clip",
    "ClipCRCError",
    "ClipError",
    "ClipFormatError",
    "ClipTruncationError",
    "EstimationFailed",
    "Keypoint",
    "RansacResult",
    "SimilarityTransform",
    "StabilizationResult",
    "detect_keypoints",
    "estimate_transform_ransac",
    "ingest_manifest",
    "match_descriptors",
    "read_clip",
    "read_ppm",
    "segment_and_normalize",
    "solve_similarity",
    "stabilize",
    "write_clip",
    "write_ppm",
]
