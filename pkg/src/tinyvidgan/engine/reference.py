"""Naive nested-loop convolutions, kept as the test oracle.

These walk every output (or input) position explicitly and never touch the
patch-matrix kernels, so they stay independent of the optimized path they
are used to check. Always available; far too slow for training.
"""
import numpy as np


def conv3d_reference(x, w, b, stride, padding):
    n, cin, t, h, wd = x.shape
    cout = w.shape[0]
    kt, kh, kw = w.shape[2:]
    st, sh, sw = stride
    pt, ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    ot = (t + 2 * pt - kt) // st + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.empty((n, cout, ot, oh, ow), dtype=x.dtype)
    for ti in range(ot):
        for hi in range(oh):
            for wi in range(ow):
                patch = xp[:, :, ti * st:ti * st + kt, hi * sh:hi * sh + kh, wi * sw:wi * sw + kw]
                out[:, :, ti, hi, wi] = np.tensordot(patch, w, axes=([1, 2, 3, 4], [1, 2, 3, 4]))
    return out + b.reshape(1, -1, 1, 1, 1)


def conv3d_transpose_reference(x, w, b, stride, padding):
    n, cin, t, h, wd = x.shape
    cout = w.shape[1]
    kt, kh, kw = w.shape[2:]
    st, sh, sw = stride
    pt, ph, pw = padding
    ft = (t - 1) * st + kt
    fh = (h - 1) * sh + kh
    fw = (wd - 1) * sw + kw
    full = np.zeros((n, cout, ft, fh, fw), dtype=x.dtype)
    for ti in range(t):
        for hi in range(h):
            for wi in range(wd):
                contrib = np.tensordot(x[:, :, ti, hi, wi], w, axes=([1], [0]))
                full[:, :, ti * st:ti * st + kt, hi * sh:hi * sh + kh, wi * sw:wi * sw + kw] += contrib
    out = full[:, :, pt:ft - pt or None, ph:fh - ph or None, pw:fw - pw or None]
    return out + b.reshape(1, -1, 1, 1, 1)


def conv2d_reference(x, w, b, stride, padding):
    y = conv3d_reference(x[:, :, None], w[:, :, None], b, (1,) + tuple(stride), (0,) + tuple(padding))
    return y[:, :, 0]


def conv2d_transpose_reference(x, w, b, stride, padding):
    y = conv3d_transpose_reference(x[:, :, None], w[:, :, None], b,
                                   (1,) + tuple(stride), (0,) + tuple(padding))
    return y[:, :, 0]
