"""Convolution family: trivial identities, shape algebra, the naive-loop
oracle, adjointness, gradients, and backend agreement."""
import numpy as np
import pytest

from tinyvidgan.engine import (ConvSpec, ShapeError, Tensor, conv2d,
                               conv2d_transpose, conv3d, conv3d_transpose,
                               gradcheck)
from tinyvidgan.engine.kernels import BACKEND
from tinyvidgan.engine.reference import (conv2d_reference,
                                         conv2d_transpose_reference,
                                         conv3d_reference,
                                         conv3d_transpose_reference)


def _zeros(c):
    return Tensor(np.zeros(c, np.float32))


def test_identity_kernel_3d():
    spec = ConvSpec(kernel=(1, 1, 1), stride=(1, 1, 1), padding=(0, 0, 0),
                    in_channels=1, out_channels=1)
    x = Tensor(np.random.rand(2, 1, 3, 4, 5).astype(np.float32))
    w = Tensor(np.ones((1, 1, 1, 1, 1), np.float32))
    assert np.array_equal(conv3d(x, spec, w, _zeros(1)).data, x.data)
    assert np.array_equal(conv3d_transpose(x, spec, w, _zeros(1)).data, x.data)


def test_all_ones_kernel_sums_receptive_field():
    spec = ConvSpec(kernel=(4, 4, 4), stride=(2, 2, 2), padding=(0, 0, 0),
                    in_channels=1, out_channels=1)
    x = Tensor(np.ones((1, 1, 8, 8, 8), np.float32))
    w = Tensor(np.ones((1, 1, 4, 4, 4), np.float32))
    y = conv3d(x, spec, w, _zeros(1))
    assert np.all(y.data == 64.0)


def test_forward_shape_formula():
    spec = ConvSpec(kernel=(4, 4, 4), stride=(2, 2, 2), padding=(1, 1, 1),
                    in_channels=3, out_channels=8)
    x = Tensor(np.zeros((2, 3, 32, 64, 64), np.float32))
    w = Tensor(np.zeros((8, 3, 4, 4, 4), np.float32))
    y = conv3d(x, spec, w, _zeros(8))
    assert y.shape == (2, 8, 16, 32, 32)


def test_transpose_shape_formulas():
    spec = ConvSpec(kernel=(4, 4, 4), stride=(2, 2, 2), padding=(1, 1, 1),
                    in_channels=512, out_channels=256)
    x = Tensor(np.zeros((1, 512, 2, 4, 4), np.float32))
    w = Tensor(np.zeros((512, 256, 4, 4, 4), np.float32))
    y = conv3d_transpose(x, spec, w, _zeros(256))
    assert y.shape == (1, 256, 4, 8, 8)

    first = ConvSpec(kernel=(2, 4, 4), stride=(1, 1, 1), padding=(0, 0, 0),
                     in_channels=100, out_channels=512)
    z = Tensor(np.zeros((1, 100, 1, 1, 1), np.float32))
    wz = Tensor(np.zeros((100, 512, 2, 4, 4), np.float32))
    out = conv3d_transpose(z, first, wz, _zeros(512))
    assert out.shape == (1, 512, 2, 4, 4)


def test_2d_shape_formulas():
    up = ConvSpec(kernel=(4, 4), stride=(2, 2), padding=(1, 1),
                  in_channels=512, out_channels=256)
    x = Tensor(np.zeros((1, 512, 4, 4), np.float32))
    w = Tensor(np.zeros((512, 256, 4, 4), np.float32))
    assert conv2d_transpose(x, up, w, _zeros(256)).shape == (1, 256, 8, 8)

    down = ConvSpec(kernel=(4, 4), stride=(2, 2), padding=(1, 1),
                    in_channels=3, out_channels=16)
    y = Tensor(np.zeros((2, 3, 64, 64), np.float32))
    wd = Tensor(np.zeros((16, 3, 4, 4), np.float32))
    assert conv2d(y, down, wd, _zeros(16)).shape == (2, 16, 32, 32)


def test_identity_kernel_2d():
    spec = ConvSpec(kernel=(1, 1), stride=(1, 1), padding=(0, 0),
                    in_channels=1, out_channels=1)
    x = Tensor(np.random.rand(1, 1, 5, 6).astype(np.float32))
    w = Tensor(np.ones((1, 1, 1, 1), np.float32))
    assert np.array_equal(conv2d(x, spec, w, _zeros(1)).data, x.data)
    assert np.array_equal(conv2d_transpose(x, spec, w, _zeros(1)).data, x.data)


def test_shape_errors_name_the_axis():
    spec = ConvSpec(kernel=(4, 4, 4), stride=(2, 2, 2), padding=(0, 0, 0),
                    in_channels=2, out_channels=2)
    with pytest.raises(ShapeError, match="channels"):
        conv3d(Tensor(np.zeros((1, 3, 8, 8, 8), np.float32)), spec,
               Tensor(np.zeros((2, 2, 4, 4, 4), np.float32)), _zeros(2))
    with pytest.raises(ShapeError, match="time"):
        conv3d(Tensor(np.zeros((1, 2, 2, 8, 8), np.float32)), spec,
               Tensor(np.zeros((2, 2, 4, 4, 4), np.float32)), _zeros(2))
    with pytest.raises(ShapeError, match="weight"):
        conv3d(Tensor(np.zeros((1, 2, 8, 8, 8), np.float32)), spec,
               Tensor(np.zeros((2, 2, 3, 3, 3), np.float32)), _zeros(2))
    with pytest.raises(ShapeError):
        ConvSpec(kernel=(0, 1, 1), stride=(1, 1, 1), padding=(0, 0, 0),
                 in_channels=1, out_channels=1)


def _random_spec(rng, rank):
    kernel = tuple(int(rng.integers(1, 5)) for _ in range(rank))
    stride = tuple(int(rng.integers(1, 3)) for _ in range(rank))
    padding = tuple(int(rng.integers(0, 2)) for _ in range(rank))
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 4))
    return ConvSpec(kernel=kernel, stride=stride, padding=padding,
                    in_channels=cin, out_channels=cout)


def _valid_input(rng, spec, transpose, tile=False):
    rank = spec.rank
    dims = []
    for a in range(rank):
        k, s, p = spec.kernel[a], spec.stride[a], spec.padding[a]
        if transpose:
            # smallest n with (n-1)s - 2p + k >= 1
            lo = 1 + max(0, -(-(1 + 2 * p - k) // s))
        else:
            lo = max(1, k - 2 * p)
        n = int(rng.integers(lo, lo + 6))
        if tile and not transpose:
            # round up so the stride tiles the padded extent exactly
            rem = (n + 2 * p - k) % s
            if rem:
                n += s - rem
        dims.append(n)
    n = int(rng.integers(1, 4))
    return rng.standard_normal((n, spec.in_channels, *dims)).astype(np.float32)


def test_oracle_equivalence_100_random_specs():
    rng = np.random.default_rng(2024)
    done = 0
    while done < 100:
        rank = 3 if done % 2 == 0 else 2
        spec = _random_spec(rng, rank)
        transpose = bool(rng.integers(0, 2))
        x = _valid_input(rng, spec, transpose)
        b = rng.standard_normal(spec.out_channels).astype(np.float32)
        if transpose:
            w = rng.standard_normal(
                (spec.in_channels, spec.out_channels, *spec.kernel)).astype(np.float32)
            fast = (conv3d_transpose if rank == 3 else conv2d_transpose)(
                Tensor(x), spec, Tensor(w), Tensor(b)).data
            ref = (conv3d_transpose_reference if rank == 3 else conv2d_transpose_reference)(
                x, w, b, spec.stride, spec.padding)
        else:
            w = rng.standard_normal(
                (spec.out_channels, spec.in_channels, *spec.kernel)).astype(np.float32)
            fast = (conv3d if rank == 3 else conv2d)(
                Tensor(x), spec, Tensor(w), Tensor(b)).data
            ref = (conv3d_reference if rank == 3 else conv2d_reference)(
                x, w, b, spec.stride, spec.padding)
        scale = max(np.abs(ref).max(), 1.0)
        assert np.abs(fast - ref).max() / scale < 1e-5
        done += 1


def test_adjointness_identity():
    rng = np.random.default_rng(7)
    for _ in range(20):
        spec = _random_spec(rng, 3)
        x = _valid_input(rng, spec, transpose=False, tile=True)
        w = rng.standard_normal(
            (spec.out_channels, spec.in_channels, *spec.kernel)).astype(np.float32)
        y = conv3d(Tensor(x), spec, Tensor(w), _zeros(spec.out_channels)).data
        yr = rng.standard_normal(y.shape).astype(np.float32)
        # adjoint consumes the same weight bytes with channel roles swapped
        tspec = ConvSpec(kernel=spec.kernel, stride=spec.stride,
                         padding=spec.padding, in_channels=spec.out_channels,
                         out_channels=spec.in_channels)
        xr = conv3d_transpose(Tensor(yr), tspec, Tensor(w),
                              _zeros(spec.in_channels)).data
        lhs = float((y.astype(np.float64) * yr).sum())
        rhs = float((x.astype(np.float64) * xr).sum())
        assert abs(lhs - rhs) / max(abs(lhs), 1e-6) < 1e-4


def test_transpose_inverts_conv_shape():
    rng = np.random.default_rng(8)
    for _ in range(20):
        spec = _random_spec(rng, 3)
        # shape symmetry needs the stride to tile the padded input
        x = _valid_input(rng, spec, transpose=False, tile=True)
        w = rng.standard_normal(
            (spec.out_channels, spec.in_channels, *spec.kernel)).astype(np.float32)
        y = conv3d(Tensor(x), spec, Tensor(w), _zeros(spec.out_channels))
        tspec = ConvSpec(kernel=spec.kernel, stride=spec.stride,
                         padding=spec.padding, in_channels=spec.out_channels,
                         out_channels=spec.in_channels)
        wt = rng.standard_normal(
            (spec.out_channels, spec.in_channels, *spec.kernel)).astype(np.float32)
        back = conv3d_transpose(y, tspec, Tensor(wt), _zeros(spec.in_channels))
        assert back.shape == x.shape


def test_conv3d_gradcheck_per_contract():
    rng = np.random.default_rng(9)
    spec = ConvSpec(kernel=(3, 3, 3), stride=(1, 1, 1), padding=(1, 1, 1),
                    in_channels=2, out_channels=2)
    x = rng.standard_normal((2, 2, 4, 4, 4))
    w = rng.standard_normal((2, 2, 3, 3, 3)) * 0.5
    b = rng.standard_normal(2)
    proj = Tensor(rng.standard_normal((2, 2, 4, 4, 4)))
    worst = gradcheck(
        lambda xt, wt, bt: (conv3d(xt, spec, wt, bt) * proj).sum(), [x, w, b])
    assert worst < 1e-4


def test_conv_transpose_gradcheck():
    rng = np.random.default_rng(10)
    for _ in range(5):
        spec = _random_spec(rng, 3)
        x = _valid_input(rng, spec, transpose=True).astype(np.float64)
        w = rng.standard_normal(
            (spec.in_channels, spec.out_channels, *spec.kernel)) * 0.5
        b = rng.standard_normal(spec.out_channels)
        out_shape = (x.shape[0], spec.out_channels) + tuple(
            spec.transpose_out_size(x.shape[2 + a], a) for a in range(3))
        proj = Tensor(rng.standard_normal(out_shape))
        gradcheck(lambda xt, wt, bt: (
            conv3d_transpose(xt, spec, wt, bt) * proj).sum(), [x, w, b])


def test_conv2d_gradcheck():
    rng = np.random.default_rng(11)
    for _ in range(5):
        spec = _random_spec(rng, 2)
        x = _valid_input(rng, spec, transpose=False).astype(np.float64)
        w = rng.standard_normal(
            (spec.out_channels, spec.in_channels, *spec.kernel)) * 0.5
        b = rng.standard_normal(spec.out_channels)
        out_shape = (x.shape[0], spec.out_channels) + tuple(
            spec.out_size(x.shape[2 + a], a) for a in range(2))
        proj = Tensor(rng.standard_normal(out_shape))
        gradcheck(lambda xt, wt, bt: (
            conv2d(xt, spec, wt, bt) * proj).sum(), [x, w, b])


@pytest.mark.skipif(BACKEND != "cython", reason="compiled backend unavailable")
def test_backends_agree_bitwise():
    from tinyvidgan.engine.kernels import _numpy_impl as npi
    import tinyvidgan.engine.kernels as K
    rng = np.random.default_rng(12)
    for _ in range(10):
        x = rng.standard_normal((2, 3, 6, 7, 5)).astype(np.float32)
        kernel, stride = (3, 2, 3), (2, 2, 1)
        a = K.im2col3d(x, kernel, stride)
        b = npi.im2col3d(x, kernel, stride)
        assert np.array_equal(a, b)
        g = np.ascontiguousarray(rng.standard_normal(a.shape).astype(np.float32))
        ca = K.col2im3d(g, x.shape, kernel, stride)
        cb = npi.col2im3d(g, x.shape, kernel, stride)
        assert np.array_equal(ca, cb)


def test_env_var_forces_numpy_backend():
    import subprocess
    import sys
    code = ("import tinyvidgan.engine.kernels as K; print(K.BACKEND)")
    out = subprocess.run(
        [sys.executable, "-c", code],
        env={"PATH": "/usr/bin:/bin", "TINYVIDGAN_CONV_BACKEND": "numpy"},
        capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
