"""Backend selection for the convolution patch kernels.

The compiled Cython extension is preferred when it built; otherwise the
pure-numpy fallback is used. ``TINYVIDGAN_CONV_BACKEND=numpy`` forces the
fallback (useful for benchmarking). float64 inputs always take the numpy
path: the compiled kernels are float32-only and float64 exists for
gradient checking, where speed is irrelevant.
"""
import os

from . import _numpy_impl

_forced = os.environ.get("TINYVIDGAN_CONV_BACKEND", "").lower()

if _forced in ("", "cython"):
    try:
        from . import _convkern as _fast
    except ImportError:
        if _forced == "cython":
            raise ImportError(
                "TINYVIDGAN_CONV_BACKEND=cython but the compiled kernels are "
                "not available; reinstall with a C compiler present"
            )
        _fast = None
else:
    _fast = None

BACKEND = _fast.BACKEND_NAME if _fast is not None else _numpy_impl.BACKEND_NAME


def im2col3d(xp, kernel, stride):
    if _fast is not None and xp.dtype == "float32":
        return _fast.im2col3d(xp, kernel, stride)
    return _numpy_impl.im2col3d(xp, kernel, stride)


def col2im3d(cols, shape, kernel, stride):
    if _fast is not None and cols.dtype == "float32":
        return _fast.col2im3d(cols, shape, kernel, stride)
    return _numpy_impl.col2im3d(cols, shape, kernel, stride)
