"""Central finite-difference gradient checking in 64-bit mode."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """d fn/dx by central differences; ``fn`` maps an ndarray to a float."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def gradcheck(build_loss, arrays, eps: float = 1e-3, tol: float = 1e-4) -> float:
    """Compare analytic and numeric gradients of a scalar loss.

    ``build_loss`` takes float64 Tensors (one per entry of ``arrays``) and
    returns a scalar Tensor. Returns the worst relative error over all
    inputs and raises AssertionError if it exceeds ``tol``.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    loss.backward()
    worst = 0.0
    for k, (t, a) in enumerate(zip(tensors, arrays)):
        analytic = np.zeros_like(a) if t.grad is None else t.grad

        def fn(x, k=k):
            probe = [Tensor(arr.copy()) for arr in arrays]
            probe[k] = Tensor(x.copy())
            return float(build_loss(*probe).data.reshape(-1)[0])

        numeric = numeric_grad(fn, a, eps=eps)
        denom = np.maximum(np.abs(numeric), 1.0)
        err = float(np.max(np.abs(analytic - numeric) / denom)) if a.size else 0.0
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch on input {k}: relative error {err:.3e}"
    return worst
