"""Pure-numpy patch extraction/scatter kernels.

im2col3d lowers a padded volume to a (N, positions, C*kt*kh*kw) patch
matrix; col2im3d is its exact adjoint (scatter-add). col2im accumulates in
kernel-offset-major order, which the compiled backend reproduces so both
backends are bit-identical.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND_NAME = "numpy"


def _out_sizes(padded, kernel, stride):
    return tuple((p - k) // s + 1 for p, k, s in zip(padded, kernel, stride))


def im2col3d(xp: np.ndarray, kernel, stride) -> np.ndarray:
    n, c, tp, hp, wp = xp.shape
    kt, kh, kw = kernel
    st, sh, sw = stride
    ot, oh, ow = _out_sizes((tp, hp, wp), kernel, stride)
    sn, sc, stt, shh, sww = xp.strides
    view = as_strided(
        xp,
        shape=(n, c, ot, oh, ow, kt, kh, kw),
        strides=(sn, sc, stt * st, shh * sh, sww * sw, stt, shh, sww),
        writeable=False,
    )
    # (N, L, C*kt*kh*kw); transpose forces the copy out of the view
    return view.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n, ot * oh * ow, c * kt * kh * kw)


def col2im3d(cols: np.ndarray, shape, kernel, stride) -> np.ndarray:
    n, c, tp, hp, wp = shape
    kt, kh, kw = kernel
    st, sh, sw = stride
    ot, oh, ow = _out_sizes((tp, hp, wp), kernel, stride)
    xp = np.zeros(shape, dtype=cols.dtype)
    patches = cols.reshape(n, ot, oh, ow, c, kt, kh, kw)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                xp[:, :, dt:dt + ot * st:st, dh:dh + oh * sh:sh, dw:dw + ow * sw:sw] += \
                    patches[:, :, :, :, :, dt, dh, dw].transpose(0, 4, 1, 2, 3)
    return xp
