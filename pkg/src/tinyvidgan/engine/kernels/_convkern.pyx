# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled float32 patch extraction/scatter kernels.

Same contracts as _numpy_impl; col2im3d accumulates in kernel-offset-major
order so results are bit-identical to the fallback.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"


def im2col3d(cnp.ndarray[cnp.float32_t, ndim=5] xp, kernel, stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t tp = xp.shape[2], hp = xp.shape[3], wp = xp.shape[4]
    cdef Py_ssize_t kt = kernel[0], kh = kernel[1], kw = kernel[2]
    cdef Py_ssize_t st = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t ot = (tp - kt) // st + 1
    cdef Py_ssize_t oh = (hp - kh) // sh + 1
    cdef Py_ssize_t ow = (wp - kw) // sw + 1
    cdef Py_ssize_t patch = c * kt * kh * kw
    cols_arr = np.empty((n, ot * oh * ow, patch), dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] cols = cols_arr
    cdef cnp.float32_t[:, :, :, :, ::1] x = xp
    cdef Py_ssize_t b, ci, t, i, j, dt, dh, dw, pos, col
    with nogil:
        for b in range(n):
            for t in range(ot):
                for i in range(oh):
                    for j in range(ow):
                        pos = (t * oh + i) * ow + j
                        col = 0
                        for ci in range(c):
                            for dt in range(kt):
                                for dh in range(kh):
                                    for dw in range(kw):
                                        cols[b, pos, col] = x[b, ci, t * st + dt, i * sh + dh, j * sw + dw]
                                        col += 1
    return cols_arr


def col2im3d(cnp.ndarray[cnp.float32_t, ndim=3] cols, shape, kernel, stride):
    cdef Py_ssize_t n = shape[0], c = shape[1]
    cdef Py_ssize_t tp = shape[2], hp = shape[3], wp = shape[4]
    cdef Py_ssize_t kt = kernel[0], kh = kernel[1], kw = kernel[2]
    cdef Py_ssize_t st = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t ot = (tp - kt) // st + 1
    cdef Py_ssize_t oh = (hp - kh) // sh + 1
    cdef Py_ssize_t ow = (wp - kw) // sw + 1
    xp_arr = np.zeros((n, c, tp, hp, wp), dtype=np.float32)
    cdef cnp.float32_t[:, :, :, :, ::1] xp = xp_arr
    cdef cnp.float32_t[:, :, ::1] cl = cols
    cdef Py_ssize_t b, ci, t, i, j, dt, dh, dw, pos, base
    cdef Py_ssize_t k3 = kt * kh * kw
    # offset-major accumulation matches the numpy fallback bit-for-bit
    with nogil:
        for dt in range(kt):
            for dh in range(kh):
                for dw in range(kw):
                    base = (dt * kh + dh) * kw + dw
                    for b in range(n):
                        for ci in range(c):
                            for t in range(ot):
                                for i in range(oh):
                                    for j in range(ow):
                                        pos = (t * oh + i) * ow + j
                                        xp[b, ci, t * st + dt, i * sh + dh, j * sw + dw] += \
                                            cl[b, pos, ci * k3 + base]
    return xp_arr
