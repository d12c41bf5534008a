"""Render clips to viewable files: PPM frame dumps and looping GIFs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .videoio import Clip, write_ppm

DEFAULT_FPS = 25


def clip_to_frames(clip) -> np.ndarray:
    """(3, T, H, W) clip to (T, H, W, 3) uint8, rounding half up."""
    data = clip.data if isinstance(clip, Clip) else np.asarray(clip)
    if data.ndim != 4 or data.shape[0] != 3:
        raise ValueError(f"expected (3, T, H, W) clip data, got {data.shape}")
    frames = data.transpose(1, 2, 3, 0)
    if frames.dtype == np.uint8:
        return frames.copy()
    scaled = (frames.astype(np.float64) + 1.0) * 127.5
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def export_ppm_frames(clip, out_dir, prefix: str = "frame",
                      fps: int = DEFAULT_FPS) -> list:
    """One PPM per frame plus a frames.json manifest; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = clip_to_frames(clip)
    paths = []
    for i, frame in enumerate(frames):
        path = out_dir / f"{prefix}-{i:04d}.ppm"
        write_ppm(path, frame)
        paths.append(path)
    manifest = {"fps": fps, "frames": [p.name for p in paths]}
    (out_dir / "frames.json").write_text(json.dumps(manifest, indent=2))
    return paths


def export_gif(clip, path, fps: int = DEFAULT_FPS) -> Path:
    """Looping GIF at the given frame rate."""
    frames = clip_to_frames(clip)
    images = [Image.fromarray(f) for f in frames]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    images[0].save(path, save_all=True, append_images=images[1:],
                   duration=max(1, round(1000 / fps)), loop=0)
    return path
