"""4-DOF similarity transforms and robust estimation between frames.

A similarity maps p -> s * R(theta) * p + t, linear in the
reparameterization (a, b, tx, ty) with a = s*cos(theta), b = s*sin(theta):

    x' = a*x - b*y + tx
    y' = b*x + a*y + ty

Two point correspondences determine the four parameters exactly, which
keeps the RANSAC minimal sample small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..engine import SplitMix64

MIN_CONSENSUS = 4


class EstimationFailed(RuntimeError):
    """No transform with a usable consensus set was found."""


@dataclass(frozen=True)
class SimilarityTransform:
    theta: float = 0.0
    s: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale must be positive, got {self.s}")

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @classmethod
    def from_linear(cls, a: float, b: float, tx: float, ty: float) -> "SimilarityTransform":
        return cls(theta=math.atan2(b, a), s=math.hypot(a, b), tx=tx, ty=ty)

    @property
    def _ab(self) -> tuple:
        return (self.s * math.cos(self.theta), self.s * math.sin(self.theta))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 2) points given as (x, y) rows."""
        a, b = self._ab
        pts = np.asarray(points, np.float64)
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([a * x - b * y + self.tx, b * x + a * y + self.ty], axis=-1)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        a, b = self._ab
        return SimilarityTransform(
            theta=self.theta + other.theta, s=self.s * other.s,
            tx=a * other.tx - b * other.ty + self.tx,
            ty=b * other.tx + a * other.ty + self.ty)

    def inverse(self) -> "SimilarityTransform":
        a, b = self._ab
        s2 = self.s * self.s
        ia, ib = a / s2, -b / s2
        return SimilarityTransform(
            theta=-self.theta, s=1.0 / self.s,
            tx=-(ia * self.tx - ib * self.ty),
            ty=-(ib * self.tx + ia * self.ty))

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous form."""
        a, b = self._ab
        return np.array([[a, -b, self.tx], [b, a, self.ty], [0.0, 0.0, 1.0]])


def solve_similarity(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity taking src points onto dst points.

    Exact for two non-coincident correspondences.
    """
    src = np.asarray(src, np.float64).reshape(-1, 2)
    dst = np.asarray(dst, np.float64).reshape(-1, 2)
    if src.shape != dst.shape or src.shape[0] < 2:
        raise ValueError("need matching src/dst arrays with at least 2 points")
    n = src.shape[0]
    design = np.zeros((2 * n, 4))
    design[0::2, 0] = src[:, 0]
    design[0::2, 1] = -src[:, 1]
    design[0::2, 2] = 1.0
    design[1::2, 0] = src[:, 1]
    design[1::2, 1] = src[:, 0]
    design[1::2, 3] = 1.0
    rhs = dst.reshape(-1)
    sol, _, rank, _ = np.linalg.lstsq(design, rhs, rcond=None)
    if rank < 4:
        raise EstimationFailed("degenerate point configuration")
    a, b, tx, ty = sol
    if math.hypot(a, b) <= 1e-12:
        raise EstimationFailed("solution collapses to zero scale")
    return SimilarityTransform.from_linear(a, b, tx, ty)


@dataclass
class RansacResult:
    transform: SimilarityTransform
    inliers: np.ndarray
    rms: float


def estimate_transform_ransac(src: np.ndarray, dst: np.ndarray,
                              iters: int = 1000, inlier_tol: float = 2.0,
                              seed: int = 0) -> RansacResult:
    """Consensus similarity between matched point sets.

    Samples 2-point models, keeps the largest inlier set, then refits by
    least squares on exactly that set (never discarding its members).
    Deterministic for a given seed. Raises EstimationFailed when the
    best consensus has fewer than 4 inliers.
    """
    src = np.asarray(src, np.float64).reshape(-1, 2)
    dst = np.asarray(dst, np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have matching shapes")
    n = src.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 matches, got {n}")
    rng = SplitMix64(seed)
    best_mask = None
    best_count = 0
    for _ in range(iters):
        i = rng.integers(0, n)
        j = rng.integers(0, n - 1)
        if j >= i:
            j += 1
        pair = np.array([i, j])
        if np.linalg.norm(src[i] - src[j]) < 1e-9:
            continue
        try:
            model = solve_similarity(src[pair], dst[pair])
        except EstimationFailed:
            continue
        err = np.linalg.norm(model.apply(src) - dst, axis=1)
        mask = err <= inlier_tol
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
    if best_count < MIN_CONSENSUS:
        raise EstimationFailed(
            f"best consensus has {best_count} inliers (< {MIN_CONSENSUS})")
    refit = solve_similarity(src[best_mask], dst[best_mask])
    resid = np.linalg.norm(refit.apply(src[best_mask]) - dst[best_mask], axis=1)
    return RansacResult(transform=refit, inliers=best_mask,
                        rms=float(np.sqrt((resid ** 2).mean())))
