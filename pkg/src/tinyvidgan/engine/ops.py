"""Network-level differentiable operations.

Activations, batch normalization, the overflow-safe binary cross-entropy,
softmax cross-entropy for the K-way heads, dropout, and the dense layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64
from .tensor import (ShapeError, Tensor, accumulate, make_op, matmul, mul,
                     sub, tmean, tsqrt)

POINTWISE_KINDS = ("relu", "leaky_relu", "sigmoid", "tanh")
LEAKY_SLOPE = 0.2


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(out):
        def run():
            accumulate(x, out.grad * mask)
        return run

    return make_op(np.where(mask, x.data, 0), (x,), bw)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    mask = x.data > 0

    def bw(out):
        def run():
            accumulate(x, out.grad * np.where(mask, 1.0, slope).astype(x.dtype))
        return run

    return make_op(np.where(mask, x.data, slope * x.data), (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    # 1/(1+e^-x) for x>=0, e^x/(1+e^x) otherwise: no overflow either way
    s = np.where(x.data >= 0,
                 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    s = s.astype(x.dtype)

    def bw(out):
        def run():
            accumulate(x, out.grad * s * (1 - s))
        return run

    return make_op(s, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bw(out):
        def run():
            accumulate(x, out.grad * (1 - t * t))
        return run

    return make_op(t, (x,), bw)


_POINTWISE = {"relu": relu, "leaky_relu": leaky_relu, "sigmoid": sigmoid, "tanh": tanh}


def pointwise(kind: str, x: Tensor) -> Tensor:
    """Elementwise activation by name; leaky_relu uses slope 0.2."""
    try:
        fn = _POINTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown pointwise kind {kind!r}; expected one of {POINTWISE_KINDS}")
    return fn(x)


@dataclass
class RunningStats:
    """Exponential-moving-average statistics for one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def zeros(cls, channels: int, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels, np.float32), np.ones(channels, np.float32), momentum)


BN_EPS = 1e-5


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str,
              running_stats: RunningStats, eps: float = BN_EPS) -> Tensor:
    """Normalize per channel (axis 1) over batch and space-time.

    Train mode uses batch statistics and updates ``running_stats`` by EMA;
    eval mode normalizes with the running statistics. Built from primitive
    ops, so the gradient falls out of the tape.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    if x.ndim < 2:
        raise ShapeError(f"batchnorm input must be batched with a channel axis, got {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError("batchnorm in train mode needs a batch of at least 2")
        mu = tmean(x, axis=axes, keepdims=True)
        centered = sub(x, mu)
        var = tmean(mul(centered, centered), axis=axes, keepdims=True)
        norm = centered / tsqrt(var + eps)
        count = x.size // x.shape[1]
        m = running_stats.momentum
        unbias = count / max(count - 1, 1)
        running_stats.mean = ((1 - m) * running_stats.mean
                              + m * mu.data.reshape(-1)).astype(np.float32)
        running_stats.var = ((1 - m) * running_stats.var
                             + m * unbias * var.data.reshape(-1)).astype(np.float32)
    else:
        rm = Tensor(running_stats.mean.reshape(bshape).astype(x.dtype))
        rv = Tensor(running_stats.var.reshape(bshape).astype(x.dtype))
        norm = sub(x, rm) / tsqrt(rv + eps)
    return mul(norm, gamma.reshape(bshape)) + beta.reshape(bshape)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0)


def stable_bce_with_logits(logits: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy in softplus form; no exp overflow.

    loss = mean(softplus(x) - t * x), d loss/dx = (sigmoid(x) - t) / n.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target, logits.dtype)
    if t.shape != logits.shape:
        t = np.broadcast_to(t, logits.shape)
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("stable_bce_with_logits expects binary targets")
    x = logits.data
    loss = np.asarray(np.mean(_softplus(x) - t * x), dtype=x.dtype)

    def bw(out):
        def run():
            sig = np.where(x >= 0,
                           1.0 / (1.0 + np.exp(-np.abs(x))),
                           np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            accumulate(logits, out.grad * (sig - t) / x.size)
        return run

    return make_op(loss, (logits,), bw)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (N, K) logits against integer labels."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (N, K) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype)

    def bw(out):
        def run():
            p = np.exp(logp)
            p[np.arange(n), labels] -= 1.0
            accumulate(logits, out.grad * p / n)
        return run

    return make_op(loss, (logits,), bw)


def dropout(x: Tensor, rate: float, rng: SplitMix64, mode: str) -> Tensor:
    """Inverted dropout: train-time expectation equals the eval output."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    keep = (rng.uniform(x.shape) >= rate).astype(x.dtype)
    return mul(x, Tensor(keep / (1.0 - rate)))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Dense layer: (N, D) @ (D, K) + (K,)."""
    return matmul(x, w) + b


def mse(a: Tensor, b: Tensor) -> Tensor:
    d = sub(a, b)
    return tmean(mul(d, d))


def mean_abs_error(a: Tensor, b: Tensor) -> Tensor:
    return tmean(sub(a, b).abs())
