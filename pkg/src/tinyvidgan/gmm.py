"""Diagonal-covariance Gaussian mixture over latent codes.

Fit with expectation-maximization from a k-means++ seeding; sampling
from the fitted mixture and pushing the draw through a trained decoder
yields the non-adversarial baseline generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import SplitMix64, Tensor, no_grad
from .nets import TwoStreamOutput

VARIANCE_FLOOR = 1e-6
_MAX_ITERS = 200
_REL_TOL = 1e-6


@dataclass(frozen=True)
class GmmModel:
    """Mixture weights plus per-component means and diagonal variances."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood_history: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, np.float64)
        mu = np.asarray(self.means, np.float64)
        var = np.asarray(self.variances, np.float64)
        if mu.ndim != 2 or w.shape != (mu.shape[0],) or var.shape != mu.shape:
            raise ValueError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, "
                f"variances {var.shape}")
        if abs(float(w.sum()) - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError("weights must form a probability simplex")
        if np.any(var < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ValueError(f"variances must be >= {VARIANCE_FLOOR}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_prob(self, x: np.ndarray) -> np.ndarray:
        """(N, K) array of log w_k + log N(x_n; mu_k, diag var_k)."""
        x = np.asarray(x, np.float64)
        inv = 1.0 / self.variances
        # ||x - mu||^2_inv expanded into three GEMM-friendly terms.
        quad = ((x * x) @ inv.T - 2.0 * (x @ (self.means * inv).T)
                + (self.means * self.means * inv).sum(axis=1))
        log_det = np.log(self.variances).sum(axis=1)
        log_norm = -0.5 * (self.dim * np.log(2.0 * np.pi) + log_det)
        return np.log(self.weights) + log_norm - 0.5 * quad

    def log_likelihood(self, x: np.ndarray) -> float:
        """Total log density of the rows of ``x`` under the mixture."""
        lp = self.component_log_prob(x)
        m = lp.max(axis=1, keepdims=True)
        return float((m[:, 0] + np.log(np.exp(lp - m).sum(axis=1))).sum())

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        lp = self.component_log_prob(x)
        lp -= lp.max(axis=1, keepdims=True)
        p = np.exp(lp)
        return p / p.sum(axis=1, keepdims=True)


def _kmeanspp_centers(x: np.ndarray, k: int, rng: SplitMix64) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), np.float64)
    centers[0] = x[rng.integers(0, n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            centers[i] = x[rng.integers(0, n)]
            continue
        u = rng.uniform() * total
        idx = int(np.searchsorted(np.cumsum(d2), u))
        centers[i] = x[min(idx, n - 1)]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


def fit_gmm(codes: np.ndarray, k: int, seed: int = 0) -> GmmModel:
    """EM fit; stops on < 1e-6 relative improvement or 200 iterations.

    K=1 is the single M-step fixed point, returned in closed form.
    """
    x = np.asarray(codes, np.float64)
    if x.ndim != 2:
        raise ValueError(f"codes must be 2-D (N, dim), got shape {x.shape}")
    n, dim = x.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} codes, got {n}")
    if k == 1:
        model = GmmModel(weights=np.ones(1),
                         means=x.mean(axis=0, keepdims=True),
                         variances=np.maximum(x.var(axis=0, keepdims=True),
                                              VARIANCE_FLOOR))
        return GmmModel(model.weights, model.means, model.variances,
                        (model.log_likelihood(x),))

    rng = SplitMix64(seed)
    means = _kmeanspp_centers(x, k, rng)
    variances = np.maximum(np.broadcast_to(x.var(axis=0), (k, dim)).copy(),
                           VARIANCE_FLOOR)
    weights = np.full(k, 1.0 / k)
    model = GmmModel(weights, means, variances)
    history = []
    for _ in range(_MAX_ITERS):
        resp = model.responsibilities(x)
        history.append(model.log_likelihood(x))
        nk = np.maximum(resp.sum(axis=0), 1e-12)
        weights = nk / nk.sum()
        means = (resp.T @ x) / nk[:, None]
        second = (resp.T @ (x * x)) / nk[:, None]
        variances = np.maximum(second - means * means, VARIANCE_FLOOR)
        model = GmmModel(weights, means, variances)
        if len(history) >= 2:
            prev, cur = history[-2], history[-1]
            if cur - prev < _REL_TOL * abs(prev):
                break
    history.append(model.log_likelihood(x))
    return GmmModel(model.weights, model.means, model.variances, tuple(history))


def sample_codes(gmm: GmmModel, count: int,
                 rng: SplitMix64) -> tuple[np.ndarray, np.ndarray]:
    """Draw (codes, component indices); components chosen by weight."""
    cdf = np.cumsum(gmm.weights)
    cdf[-1] = 1.0
    u = rng.uniform((count,)) if count > 1 else np.asarray([rng.uniform()])
    comps = np.searchsorted(cdf, u, side="right").astype(np.int64)
    comps = np.minimum(comps, gmm.k - 1)
    noise = rng.normal((count, gmm.dim))
    codes = gmm.means[comps] + np.sqrt(gmm.variances[comps]) * noise
    return codes, comps


def sample_baseline(gmm: GmmModel, decoder, seed: int = 0) -> np.ndarray:
    """One decoded clip (3, T, S, S) from a mixture draw; deterministic per seed."""
    rng = SplitMix64(seed)
    codes, _ = sample_codes(gmm, 1, rng)
    with no_grad():
        out = decoder.forward(Tensor(codes.astype(np.float32)), "eval")
        video = out.video if isinstance(out, TwoStreamOutput) else out
    return video.data[0]
