"""Strided and fractionally strided convolutions (3-D and 2-D).

The forward map is standard cross-correlation lowered to a patch-matrix
multiply; the fractionally strided (transposed) variant is its exact
adjoint, so ``<conv(x, w), y> == <x, conv_transpose(y, w)>`` for matching
specs. Weight layouts: conv ``(C_out, C_in, *kernel)``, transpose
``(C_in, C_out, *kernel)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, accumulate, make_op

_AXIS_NAMES_3D = ("time", "height", "width")


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution layer."""

    kernel: tuple
    stride: tuple
    padding: tuple
    in_channels: int
    out_channels: int

    def __post_init__(self):
        if len(self.kernel) != len(self.stride) or len(self.kernel) != len(self.padding):
            raise ShapeError("kernel/stride/padding rank mismatch")
        if any(k < 1 for k in self.kernel) or any(s < 1 for s in self.stride):
            raise ShapeError("kernel and stride entries must be >= 1")
        if any(p < 0 for p in self.padding):
            raise ShapeError("padding entries must be >= 0")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be >= 1")

    @property
    def rank(self) -> int:
        return len(self.kernel)

    def out_size(self, n: int, axis: int) -> int:
        """Forward output extent: floor((n + 2p - k) / s) + 1."""
        return (n + 2 * self.padding[axis] - self.kernel[axis]) // self.stride[axis] + 1

    def transpose_out_size(self, n: int, axis: int) -> int:
        """Fractionally strided output extent: (n - 1) * s - 2p + k."""
        return (n - 1) * self.stride[axis] - 2 * self.padding[axis] + self.kernel[axis]


def conv_spec3d(kernel, stride, padding, in_channels, out_channels) -> ConvSpec:
    return ConvSpec(tuple(kernel), tuple(stride), tuple(padding), in_channels, out_channels)


def _axis_names(rank):
    return _AXIS_NAMES_3D if rank == 3 else _AXIS_NAMES_3D[1:]


def _check_input(x: Tensor, spec: ConvSpec, transpose: bool):
    if x.ndim != spec.rank + 2:
        raise ShapeError(
            f"expected batched {spec.rank}-D input (batch, channels, ...), got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"channels axis mismatch: input has {x.shape[1]}, spec expects {spec.in_channels}")
    names = _axis_names(spec.rank)
    for axis, n in enumerate(x.shape[2:]):
        out = spec.transpose_out_size(n, axis) if transpose else spec.out_size(n, axis)
        if out < 1:
            raise ShapeError(
                f"{names[axis]} axis collapses: extent {n} with kernel {spec.kernel[axis]}, "
                f"stride {spec.stride[axis]}, padding {spec.padding[axis]} gives {out}")


def _check_weights(w: Tensor, b: Tensor, spec: ConvSpec, transpose: bool):
    ch = (spec.in_channels, spec.out_channels) if transpose else (spec.out_channels, spec.in_channels)
    expect = ch + spec.kernel
    if tuple(w.shape) != expect:
        raise ShapeError(f"weight shape {w.shape} does not match spec (expected {expect})")
    if tuple(b.shape) != (spec.out_channels,):
        raise ShapeError(f"bias shape {b.shape} does not match out_channels {spec.out_channels}")


def _pad5(x: np.ndarray, pad) -> np.ndarray:
    pt, ph, pw = pad
    if pt == ph == pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _unpad5(x: np.ndarray, pad) -> np.ndarray:
    pt, ph, pw = pad
    t, h, w = x.shape[2:]
    return np.ascontiguousarray(x[:, :, pt:t - pt or None, ph:h - ph or None, pw:w - pw or None])


def conv3d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor) -> Tensor:
    """Strided spatio-temporal cross-correlation over (N, C, T, H, W)."""
    _check_input(x, spec, transpose=False)
    _check_weights(weights, bias, spec, transpose=False)
    n = x.shape[0]
    out_sz = tuple(spec.out_size(x.shape[2 + a], a) for a in range(3))
    xp = _pad5(x.data, spec.padding)
    cols = kernels.im2col3d(xp, spec.kernel, spec.stride)  # (N, L, Cin*K)
    wm = weights.data.reshape(spec.out_channels, -1)
    out_mat = cols @ wm.T + bias.data  # (N, L, Cout)
    out_data = np.ascontiguousarray(
        out_mat.transpose(0, 2, 1).reshape(n, spec.out_channels, *out_sz))

    def bw(out):
        def run():
            g_mat = out.grad.reshape(n, spec.out_channels, -1).transpose(0, 2, 1)
            if bias.requires_grad:
                accumulate(bias, g_mat.sum(axis=(0, 1)))
            if weights.requires_grad:
                gw = np.einsum("nlo,nlk->ok", g_mat, cols)
                accumulate(weights, gw.reshape(weights.shape))
            if x.requires_grad:
                gcols = np.ascontiguousarray(g_mat @ wm)
                gxp = kernels.col2im3d(gcols, xp.shape, spec.kernel, spec.stride)
                accumulate(x, _unpad5(gxp, spec.padding))
        return run

    return make_op(out_data, (x, weights, bias), bw)


def conv3d_transpose(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor) -> Tensor:
    """Fractionally strided (upsampling) counterpart; adjoint of conv3d."""
    _check_input(x, spec, transpose=True)
    _check_weights(weights, bias, spec, transpose=True)
    n = x.shape[0]
    out_sz = tuple(spec.transpose_out_size(x.shape[2 + a], a) for a in range(3))
    padded_sz = tuple(o + 2 * p for o, p in zip(out_sz, spec.padding))
    x_mat = x.data.reshape(n, spec.in_channels, -1).transpose(0, 2, 1)  # (N, L, Cin)
    wm = weights.data.reshape(spec.in_channels, -1)  # (Cin, Cout*K)
    cols = np.ascontiguousarray(x_mat @ wm)
    full = kernels.col2im3d(cols, (n, spec.out_channels) + padded_sz, spec.kernel, spec.stride)
    out_data = _unpad5(full, spec.padding) + bias.data.reshape(1, -1, 1, 1, 1)

    def bw(out):
        def run():
            gp = _pad5(out.grad, spec.padding)
            gcols = kernels.im2col3d(gp, spec.kernel, spec.stride)  # (N, L, Cout*K)
            if bias.requires_grad:
                accumulate(bias, out.grad.sum(axis=(0, 2, 3, 4)))
            if weights.requires_grad:
                gw = np.einsum("nli,nlk->ik", x_mat, gcols)
                accumulate(weights, gw.reshape(weights.shape))
            if x.requires_grad:
                gx_mat = gcols @ wm.T  # (N, L, Cin)
                accumulate(x, np.ascontiguousarray(
                    gx_mat.transpose(0, 2, 1).reshape(x.shape)))
        return run

    return make_op(out_data, (x, weights, bias), bw)


def _as3d_spec(spec: ConvSpec) -> ConvSpec:
    return ConvSpec((1,) + spec.kernel, (1,) + spec.stride, (0,) + spec.padding,
                    spec.in_channels, spec.out_channels)


def conv2d(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor) -> Tensor:
    """2-D strided convolution over (N, C, H, W); routed through conv3d."""
    if spec.rank != 2:
        raise ShapeError("conv2d needs a rank-2 spec")
    _check_input(x, spec, transpose=False)
    _check_weights(weights, bias, spec, transpose=False)
    x5 = x.reshape((x.shape[0], x.shape[1], 1) + tuple(x.shape[2:]))
    w5 = weights.reshape((weights.shape[0], weights.shape[1], 1) + tuple(weights.shape[2:]))
    y5 = conv3d(x5, _as3d_spec(spec), w5, bias)
    return y5.reshape((y5.shape[0], y5.shape[1]) + tuple(y5.shape[3:]))


def conv2d_transpose(x: Tensor, spec: ConvSpec, weights: Tensor, bias: Tensor) -> Tensor:
    """2-D fractionally strided convolution over (N, C, H, W)."""
    if spec.rank != 2:
        raise ShapeError("conv2d_transpose needs a rank-2 spec")
    _check_input(x, spec, transpose=True)
    _check_weights(weights, bias, spec, transpose=True)
    x5 = x.reshape((x.shape[0], x.shape[1], 1) + tuple(x.shape[2:]))
    w5 = weights.reshape((weights.shape[0], weights.shape[1], 1) + tuple(weights.shape[2:]))
    y5 = conv3d_transpose(x5, _as3d_spec(spec), w5, bias)
    return y5.reshape((y5.shape[0], y5.shape[1]) + tuple(y5.shape[3:]))
