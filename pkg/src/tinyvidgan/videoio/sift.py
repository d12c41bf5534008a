"""Simplified scale-invariant keypoints for adjacent-frame registration.

Difference-of-Gaussians extrema over a 3-octave pyramid with contrast
and edge rejection, a gradient-histogram orientation, and a 4x4x8
(128-dim) descriptor. Deviations from the reference algorithm, chosen
because adjacent video frames differ by small similarities only:

* 2 intervals per octave (k = sqrt(2)), absolute-sigma blurs;
* single orientation per keypoint (no secondary peaks);
* nearest-cell descriptor binning instead of trilinear interpolation;
* subpixel refinement in x, y only (no scale interpolation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

N_OCTAVES = 3
INTERVALS = 2
SIGMA0 = 1.6
CONTRAST_THRESHOLD = 0.03
EDGE_RATIO = 10.0
LOWE_RATIO = 0.8
_BORDER = 8
_DESC_RADIUS = 8
_N_CELLS = 4
_N_BINS = 8


@dataclass
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    descriptor: np.ndarray


def _as_gray(frame: np.ndarray) -> np.ndarray:
    f = np.asarray(frame)
    if f.ndim == 3:
        f = f.mean(axis=2)
    if f.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale frame, got shape {f.shape}")
    f = f.astype(np.float64)
    if f.size and f.max() > 2.0:
        f = f / 255.0
    return f


def _orientation(gauss: np.ndarray, x: int, y: int, sigma: float) -> float:
    radius = max(3, int(round(4 * sigma)))
    h, w = gauss.shape
    y0, y1 = max(y - radius, 1), min(y + radius + 1, h - 1)
    x0, x1 = max(x - radius, 1), min(x + radius + 1, w - 1)
    patch = gauss[y0 - 1:y1 + 1, x0 - 1:x1 + 1]
    gy, gx = np.gradient(patch)
    gy, gx = gy[1:-1, 1:-1], gx[1:-1, 1:-1]
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % (2 * np.pi)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    weight = np.exp(-((yy - y) ** 2 + (xx - x) ** 2) / (2 * (1.5 * sigma) ** 2))
    bins = (ang / (2 * np.pi) * 36).astype(int).ravel() % 36
    hist = np.bincount(bins, weights=(mag * weight).ravel(), minlength=36)
    peak = int(np.argmax(hist))
    return (peak + 0.5) * 2 * np.pi / 36


def _descriptor(gauss: np.ndarray, x: int, y: int, orientation: float) -> np.ndarray:
    h, w = gauss.shape
    r = _DESC_RADIUS
    y0, y1 = max(y - r, 1), min(y + r, h - 1)
    x0, x1 = max(x - r, 1), min(x + r, w - 1)
    patch = gauss[y0 - 1:y1 + 1, x0 - 1:x1 + 1]
    gy, gx = np.gradient(patch)
    gy, gx = gy[1:-1, 1:-1], gx[1:-1, 1:-1]
    mag = np.hypot(gx, gy)
    ang = (np.arctan2(gy, gx) - orientation) % (2 * np.pi)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy, dx = (yy - y).astype(np.float64), (xx - x).astype(np.float64)
    cos_o, sin_o = np.cos(orientation), np.sin(orientation)
    # rotate offsets into the keypoint frame
    rx = cos_o * dx + sin_o * dy
    ry = -sin_o * dx + cos_o * dy
    cell_x = np.clip(((rx + r) / (2 * r) * _N_CELLS).astype(int), 0, _N_CELLS - 1)
    cell_y = np.clip(((ry + r) / (2 * r) * _N_CELLS).astype(int), 0, _N_CELLS - 1)
    abin = (ang / (2 * np.pi) * _N_BINS).astype(int) % _N_BINS
    weight = mag * np.exp(-(dx ** 2 + dy ** 2) / (2 * r * r))
    idx = (cell_y * _N_CELLS + cell_x) * _N_BINS + abin
    desc = np.bincount(idx.ravel(), weights=weight.ravel(),
                       minlength=_N_CELLS * _N_CELLS * _N_BINS)
    norm = np.linalg.norm(desc)
    if norm < 1e-12:
        return np.zeros(_N_CELLS * _N_CELLS * _N_BINS, np.float32)
    desc = np.minimum(desc / norm, 0.2)
    desc = desc / max(np.linalg.norm(desc), 1e-12)
    return desc.astype(np.float32)


def _subpixel_offset(dog: np.ndarray, x: int, y: int) -> tuple:
    gx = (dog[y, x + 1] - dog[y, x - 1]) / 2.0
    gy = (dog[y + 1, x] - dog[y - 1, x]) / 2.0
    hxx = dog[y, x + 1] - 2 * dog[y, x] + dog[y, x - 1]
    hyy = dog[y + 1, x] - 2 * dog[y, x] + dog[y - 1, x]
    hxy = (dog[y + 1, x + 1] - dog[y + 1, x - 1]
           - dog[y - 1, x + 1] + dog[y - 1, x - 1]) / 4.0
    det = hxx * hyy - hxy * hxy
    if abs(det) < 1e-12:
        return 0.0, 0.0
    ox = -(hyy * gx - hxy * gy) / det
    oy = -(hxx * gy - hxy * gx) / det
    return float(np.clip(ox, -0.5, 0.5)), float(np.clip(oy, -0.5, 0.5))


def _is_edge_like(dog: np.ndarray, x: int, y: int) -> bool:
    hxx = dog[y, x + 1] - 2 * dog[y, x] + dog[y, x - 1]
    hyy = dog[y + 1, x] - 2 * dog[y, x] + dog[y - 1, x]
    hxy = (dog[y + 1, x + 1] - dog[y + 1, x - 1]
           - dog[y - 1, x + 1] + dog[y - 1, x - 1]) / 4.0
    tr = hxx + hyy
    det = hxx * hyy - hxy * hxy
    if det <= 0:
        return True
    return tr * tr / det >= (EDGE_RATIO + 1) ** 2 / EDGE_RATIO


def detect_keypoints(frame: np.ndarray) -> list:
    """DoG extrema with contrast/edge rejection over 3 octaves."""
    gray = _as_gray(frame)
    if gray.shape[0] < 32 or gray.shape[1] < 32:
        raise ValueError(f"frame must be at least 32x32, got {gray.shape}")
    k = 2.0 ** (1.0 / INTERVALS)
    keypoints = []
    base = gray
    for octave in range(N_OCTAVES):
        if min(base.shape) < 2 * _BORDER + 3:
            break
        sigmas = [SIGMA0 * k ** i for i in range(INTERVALS + 3)]
        gaussians = [gaussian_filter(base, s) for s in sigmas]
        dogs = [g1 - g0 for g0, g1 in zip(gaussians, gaussians[1:])]
        stack = np.stack(dogs)
        h, w = base.shape
        for lvl in range(1, len(dogs) - 1):
            center = stack[lvl, 1:-1, 1:-1]
            strong = np.abs(center) > CONTRAST_THRESHOLD
            if not strong.any():
                continue
            neigh = np.stack([
                stack[lvl + dl, 1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
                for dl in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                if not (dl == 0 and dy == 0 and dx == 0)])
            is_max = center > neigh.max(axis=0)
            is_min = center < neigh.min(axis=0)
            ys, xs = np.nonzero(strong & (is_max | is_min))
            for y, x in zip(ys + 1, xs + 1):
                if not (_BORDER <= x < w - _BORDER and _BORDER <= y < h - _BORDER):
                    continue
                if _is_edge_like(stack[lvl], x, y):
                    continue
                ox, oy = _subpixel_offset(stack[lvl], x, y)
                gauss = gaussians[lvl]
                orient = _orientation(gauss, x, y, sigmas[lvl])
                desc = _descriptor(gauss, x, y, orient)
                if not desc.any():
                    continue
                keypoints.append(Keypoint(
                    x=(x + ox) * 2.0 ** octave, y=(y + oy) * 2.0 ** octave,
                    scale=sigmas[lvl] * 2.0 ** octave, orientation=orient,
                    descriptor=desc))
        base = gaussians[INTERVALS][::2, ::2]
    return keypoints


def _descriptor_matrix(kps) -> np.ndarray:
    if len(kps) == 0:
        return np.zeros((0, _N_CELLS * _N_CELLS * _N_BINS))
    if isinstance(kps, np.ndarray):
        return kps.astype(np.float64).reshape(len(kps), -1)
    return np.array([kp.descriptor for kp in kps], np.float64)


def match_descriptors(a, b) -> list:
    """Mutual nearest neighbors passing the 0.8 distance-ratio test.

    Returns (index into a, index into b) pairs. Inputs are Keypoint
    lists or plain descriptor arrays.
    """
    da, db = _descriptor_matrix(a), _descriptor_matrix(b)
    if len(da) == 0 or len(db) == 0:
        return []
    d2 = ((da ** 2).sum(1)[:, None] + (db ** 2).sum(1)[None, :]
          - 2.0 * (da @ db.T))
    np.maximum(d2, 0.0, out=d2)
    fwd = np.argmin(d2, axis=1)
    rev = np.argmin(d2, axis=0)
    pairs = []
    for i, j in enumerate(fwd):
        if rev[j] != i:
            continue
        if db.shape[0] >= 2:
            row = d2[i]
            best = row[j]
            second = np.min(np.delete(row, j))
            if second > 0 and np.sqrt(best) >= LOWE_RATIO * np.sqrt(second):
                continue
        pairs.append((i, int(j)))
    return pairs
