"""Camera stabilization and clip segmentation.

Chains adjacent-frame similarity transforms back to the first frame,
inverse-warps every frame onto that reference with bilinear sampling,
and fills pixels that fall outside the source with the most recent
stabilized frame. Sequences whose adjacent-frame registration fails or
exceeds an rms reprojection threshold are flagged dropped (the warp is
still returned best-effort so callers can inspect it).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .clipio import Clip, write_clip
from .ppm import read_ppm
from .sift import detect_keypoints, match_descriptors
from .transform import EstimationFailed, SimilarityTransform, estimate_transform_ransac

RMS_DROP_THRESHOLD = 3.0
_MIN_MATCHES = 2


@dataclass
class StabilizationResult:
    frames: np.ndarray
    dropped: bool
    link_rms: list = field(default_factory=list)


def _frame_gray(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 3:
        return frame.mean(axis=2)
    return frame


def _link_transform(kps_cur, kps_prev, seed: int):
    """Similarity mapping current-frame coords into previous-frame coords."""
    matches = match_descriptors(kps_cur, kps_prev)
    if len(matches) < _MIN_MATCHES:
        raise EstimationFailed(f"only {len(matches)} descriptor matches")
    src = np.array([[kps_cur[i].x, kps_cur[i].y] for i, _ in matches])
    dst = np.array([[kps_prev[j].x, kps_prev[j].y] for _, j in matches])
    return estimate_transform_ransac(src, dst, seed=seed)


def _warp_frame(frame: np.ndarray, transform: SimilarityTransform):
    """Inverse-warp onto the reference grid; returns (warped, valid mask)."""
    h, w = frame.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    src = transform.inverse().apply(pts)
    sx = src[:, 0].reshape(h, w)
    sy = src[:, 1].reshape(h, w)
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    if frame.ndim == 2:
        warped = map_coordinates(frame.astype(np.float64), [sy, sx],
                                 order=1, mode="nearest")
    else:
        warped = np.stack([
            map_coordinates(frame[..., c].astype(np.float64), [sy, sx],
                            order=1, mode="nearest")
            for c in range(frame.shape[2])], axis=2)
    return warped, valid


def stabilize(frames: np.ndarray, rms_threshold: float = RMS_DROP_THRESHOLD,
              seed: int = 0) -> StabilizationResult:
    """Warp a (T, H, W[, C]) sequence onto its first frame."""
    frames = np.asarray(frames)
    if frames.ndim not in (3, 4):
        raise ValueError(f"expected (T, H, W) or (T, H, W, C), got {frames.shape}")
    if frames.shape[0] < 2:
        raise ValueError("stabilization needs at least 2 frames")
    t = frames.shape[0]
    keypoints = [detect_keypoints(_frame_gray(frames[i])) for i in range(t)]

    dropped = False
    link_rms = []
    chain = [SimilarityTransform.identity()]
    for i in range(1, t):
        try:
            result = _link_transform(keypoints[i], keypoints[i - 1], seed + i)
            link = result.transform
            link_rms.append(result.rms)
            if result.rms > rms_threshold:
                dropped = True
        except EstimationFailed:
            dropped = True
            link = SimilarityTransform.identity()
            link_rms.append(float("inf"))
        chain.append(chain[-1].compose(link))

    out = np.empty(frames.shape, np.float64)
    out[0] = frames[0]
    for i in range(1, t):
        warped, valid = _warp_frame(frames[i], chain[i])
        fill = out[i - 1]
        if frames.ndim == 4:
            valid = valid[..., None]
        out[i] = np.where(valid, warped, fill)

    if np.issubdtype(frames.dtype, np.integer):
        info = np.iinfo(frames.dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    return StabilizationResult(frames=out.astype(frames.dtype),
                               dropped=dropped, link_rms=link_rms)


def _resize_bilinear(frame: np.ndarray, size: int) -> np.ndarray:
    """Align-corners bilinear resize of a square frame to size x size."""
    side = frame.shape[0]
    coords = np.linspace(0.0, side - 1.0, size)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    if frame.ndim == 2:
        return map_coordinates(frame.astype(np.float64), [yy, xx], order=1)
    return np.stack([
        map_coordinates(frame[..., c].astype(np.float64), [yy, xx], order=1)
        for c in range(frame.shape[2])], axis=2)


def segment_and_normalize(frames: np.ndarray, clip_len: int = 32,
                          size: int = 64) -> list:
    """Center-crop, resize, window into clips, and normalize to [-1, 1].

    Returns a list of (3, clip_len, size, size) float32 arrays; a
    sequence shorter than clip_len yields an empty list.
    """
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = np.repeat(frames[..., None], 3, axis=3)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise ValueError(f"expected (T, H, W[, 3]) frames, got {frames.shape}")
    t, h, w = frames.shape[:3]
    if t < clip_len:
        return []
    side = min(h, w)
    y0 = (h - side) // 2
    x0 = (w - side) // 2
    cropped = frames[:, y0:y0 + side, x0:x0 + side]

    if np.issubdtype(frames.dtype, np.integer):
        scale = lambda v: v / 127.5 - 1.0
    else:
        scale = lambda v: v
    clips = []
    for k in range(t // clip_len):
        window = cropped[k * clip_len:(k + 1) * clip_len]
        resized = np.stack([_resize_bilinear(f, size) for f in window])
        video = scale(resized).transpose(3, 0, 1, 2)
        clips.append(np.clip(video, -1.0, 1.0).astype(np.float32))
    return clips


def _load_frame_dir(frame_dir: Path) -> np.ndarray:
    paths = sorted(frame_dir.glob("*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no .ppm frames in {frame_dir}")
    return np.stack([read_ppm(p) for p in paths])


def ingest_manifest(manifest_path, out_dir, clip_len: int = 32, size: int = 64,
                    tags=None, run_stabilize: bool = True) -> list:
    """Process a JSONL manifest of frame directories into clip files.

    Each line is {"id", "frame_dir", "fps", "tags"}. Entries are skipped
    when a tag filter is given and none of their tags match, or when
    stabilization drops the sequence. Returns written clip paths.
    """
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = set(tags) if tags else None
    written = []
    with open(manifest_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            if wanted is not None and not (set(entry.get("tags", [])) & wanted):
                continue
            frame_dir = manifest_path.parent / entry["frame_dir"]
            frames = _load_frame_dir(frame_dir)
            if run_stabilize and frames.shape[0] >= 2:
                result = stabilize(frames)
                if result.dropped:
                    continue
                frames = result.frames
            for k, video in enumerate(segment_and_normalize(frames, clip_len, size)):
                path = out_dir / f"{entry['id']}-{k:03d}.tvclip"
                write_clip(path, Clip(video))
                written.append(path)
    return written
