"""Adam optimizer as a functional update plus a thin stateful wrapper."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import SplitMix64
from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    """Per-parameter moment estimates and hyperparameters."""

    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 2e-4, beta1: float = 0.5,
                   beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
                   m=[np.zeros(p.shape, np.float32) for p in params],
                   v=[np.zeros(p.shape, np.float32) for p in params])


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update applied in place to ``params``.

    ``params`` are Tensors, ``grads`` matching numpy arrays (or None to
    skip a parameter). Increments ``state.step_count`` exactly once.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if len(state.m) != len(params):
        raise ShapeError(f"optimizer state tracks {len(state.m)} params, got {len(params)}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    scale = state.lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float32)
        if g.shape != p.shape:
            raise ShapeError(f"grad shape {g.shape} does not match param {p.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        p.data -= scale * state.m[i] / (np.sqrt(state.v[i]) + state.epsilon)
    return params, state


class Adam:
    """Stateful wrapper tying an AdamState to a fixed parameter list."""

    def __init__(self, params, lr: float = 2e-4, beta1: float = 0.5,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr, beta1, beta2, epsilon)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)


def init_gaussian(shape, std: float = 0.01, seed: int = 0,
                  requires_grad: bool = True) -> Tensor:
    """Gaussian-initialized parameter tensor; deterministic per seed."""
    rng = SplitMix64(seed)
    return Tensor((rng.normal(shape) * std).astype(np.float32), requires_grad=requires_grad)
