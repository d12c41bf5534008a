"""Synthetic clip corpora for desk-scale experiments.

Two generators, both rendering a bright square sprite over the same
fixed background image so the static pathway of a two-stream model has
something stable to learn:

* ``sprite_dataset`` - the sprite slides horizontally along a fixed
  band at constant speed, wrapping at the edges; the only latent factor
  is the per-clip phase (start column). All temporal variation is
  confined to the band returned by ``trajectory_region``.
* ``action_dataset`` - the sprite moves up, down, left or right from a
  jittered start near the center; the motion direction is the class
  label for the 4-way recognition task.

Clips are float32, shape (3, T, S, S), values in [-1, 1].
"""

from __future__ import annotations

import numpy as np

from .engine import SplitMix64

SPRITE_COLOR = np.array([0.9, 0.7, 0.5], np.float32)
ACTION_NAMES = ("up", "down", "left", "right")
_ACTION_STEPS = {0: (0, -1), 1: (0, 1), 2: (-1, 0), 3: (1, 0)}


def sprite_size(size: int) -> int:
    return max(2, size // 4)


def fixed_background(size: int) -> np.ndarray:
    """Deterministic dark gradient image, (3, size, size) in [-1, -0.1]."""
    ramp = np.linspace(0.0, 1.0, size, dtype=np.float32)
    y = ramp[:, None]
    x = ramp[None, :]
    bg = np.stack([
        np.broadcast_to(-0.9 + 0.5 * x, (size, size)),
        np.broadcast_to(-0.8 + 0.5 * y, (size, size)),
        -0.7 + 0.3 * x * y,
    ])
    return bg.astype(np.float32)


def trajectory_region(size: int) -> np.ndarray:
    """Boolean (size, size) mask of rows the sliding sprite can occupy."""
    side = sprite_size(size)
    y0 = (size - side) // 2
    mask = np.zeros((size, size), dtype=bool)
    mask[y0:y0 + side, :] = True
    return mask


def _draw_sprite(frame: np.ndarray, x: int, y: int, side: int,
                 wrap: bool) -> None:
    size = frame.shape[-1]
    ys = np.arange(y, y + side)
    xs = np.arange(x, x + side)
    if wrap:
        ys, xs = ys % size, xs % size
    else:
        ys = ys[(ys >= 0) & (ys < size)]
        xs = xs[(xs >= 0) & (xs < size)]
    frame[:, ys[:, None], xs[None, :]] = SPRITE_COLOR[:, None, None]


def sprite_clip(frames: int, size: int, phase: int,
                speed: int | None = None) -> np.ndarray:
    """One sliding-sprite clip; ``phase`` is the start column."""
    side = sprite_size(size)
    if speed is None:
        speed = max(1, size // frames)
    y0 = (size - side) // 2
    bg = fixed_background(size)
    clip = np.repeat(bg[:, None], frames, axis=1)
    for t in range(frames):
        _draw_sprite(clip[:, t], (phase + t * speed) % size, y0, side, wrap=True)
    return clip


def sprite_dataset(count: int, frames: int = 8, size: int = 16,
                   seed: int = 0) -> np.ndarray:
    """(count, 3, frames, size, size) clips differing only in phase."""
    rng = SplitMix64(seed)
    phases = rng.integers(0, size, (count,))
    return np.stack([sprite_clip(frames, size, int(p)) for p in phases])


def action_clip(frames: int, size: int, label: int, start_x: int,
                start_y: int, speed: int = 1) -> np.ndarray:
    """One clip of the sprite moving in direction ``label`` (0..3)."""
    if label not in _ACTION_STEPS:
        raise ValueError(f"label must be in 0..3, got {label}")
    side = sprite_size(size)
    dx, dy = _ACTION_STEPS[label]
    bg = fixed_background(size)
    clip = np.repeat(bg[:, None], frames, axis=1)
    lim = size - side
    for t in range(frames):
        x = min(max(start_x + t * speed * dx, 0), lim)
        y = min(max(start_y + t * speed * dy, 0), lim)
        _draw_sprite(clip[:, t], x, y, side, wrap=False)
    return clip


def action_dataset(count_per_class: int, frames: int = 8, size: int = 16,
                   seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Balanced 4-class motion-direction set: (clips, labels).

    Start positions are jittered around a point offset against the
    motion direction, so the sprite never parks against a border for
    most of the clip.
    """
    rng = SplitMix64(seed)
    side = sprite_size(size)
    center = (size - side) // 2
    back = max(1, frames // 2 - 1)
    jitter = max(1, size // 8)
    clips, labels = [], []
    for label in range(4):
        dx, dy = _ACTION_STEPS[label]
        for _ in range(count_per_class):
            jx, jy = rng.integers(-jitter, jitter + 1, (2,))
            x0 = min(max(center - back * dx + int(jx), 0), size - side)
            y0 = min(max(center - back * dy + int(jy), 0), size - side)
            clips.append(action_clip(frames, size, label, x0, y0))
            labels.append(label)
    order = rng.permutation(len(clips))
    return np.stack(clips)[order], np.asarray(labels, np.int64)[order]


def minibatch_indices(rng: SplitMix64, count: int, batch_size: int):
    """Endless stream of index arrays covering the dataset epoch-wise.

    Reshuffles every epoch; datasets smaller than the batch are sampled
    with replacement instead.
    """
    if count < 1 or batch_size < 1:
        raise ValueError("count and batch_size must be positive")
    if count < batch_size:
        while True:
            yield rng.integers(0, count, (batch_size,))
    while True:
        order = rng.permutation(count)
        for i in range(0, count - batch_size + 1, batch_size):
            yield order[i:i + batch_size]


def temporal_variance_ratio(clips: np.ndarray, region: np.ndarray) -> float:
    """Mean per-pixel temporal variance inside ``region`` over outside."""
    var = clips.astype(np.float64).var(axis=2).mean(axis=(0, 1))
    inside = float(var[region].mean())
    outside = float(var[~region].mean())
    return inside / max(outside, 1e-12)
