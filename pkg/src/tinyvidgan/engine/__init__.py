"""Dense tensor engine: autodiff, convolutions, optimizer, RNG."""
from .conv import (ConvSpec, conv2d, conv2d_transpose, conv3d,
                   conv3d_transpose, conv_spec3d)
from .gradcheck import gradcheck, numeric_grad
from .kernels import BACKEND
from .ops import (BN_EPS, RunningStats, batchnorm, dropout, leaky_relu,
                  linear, mean_abs_error, mse, pointwise, relu, sigmoid,
                  softmax_cross_entropy, stable_bce_with_logits, tanh)
from .optim import Adam, AdamState, adam_step, init_gaussian
from .rng import SplitMix64
from .tensor import (GraphError, ShapeError, Tensor, accumulate, add,
                     broadcast_to, concat, div, getitem, make_op, matmul,
                     mul, neg, no_grad, reshape, sub, tabs, tmean, tsqrt,
                     tsum)

__all__ = [
    "Adam", "AdamState", "BACKEND", "BN_EPS", "ConvSpec", "GraphError",
    "RunningStats", "ShapeError", "SplitMix64", "Tensor", "accumulate",
    "adam_step", "add", "batchnorm", "broadcast_to", "concat", "conv2d",
    "conv2d_transpose", "conv3d", "conv3d_transpose", "conv_spec3d", "div",
    "dropout", "getitem", "gradcheck", "init_gaussian", "leaky_relu",
    "linear", "make_op", "matmul", "mean_abs_error", "mse", "mul", "neg",
    "no_grad", "numeric_grad", "pointwise", "relu", "reshape", "sigmoid",
    "softmax_cross_entropy", "stable_bce_with_logits", "sub", "tabs",
    "tanh", "tmean", "tsqrt", "tsum",
]
