"""Video generator, discriminator, and encoder architectures.

All networks are built from one scaling plan: a first valid (transposed)
convolution maps the latent code to a (t0, s0, s0) seed volume, four
upsampling layers double the spatial extent to the configured size, and
the temporal extent doubles on as many of those layers as the clip
length requires. The discriminator and encoders run the same plan in
reverse. At the default configuration the layer chains are

    generator      (512,2,4,4) -> (256,4,8,8) -> (128,8,16,16)
                   -> (64,16,32,32) -> (3,32,64,64)
    discriminator  the same chain reversed, ending in one logit
    frame encoder  (3,64,64) -> (64,32,32) -> (128,16,16) -> (256,8,8)
                   -> (512,4,4) -> latent

The two-stream generator composes a moving foreground, a per-pixel
mask, and a time-replicated static background:

    video = m * f + (1 - m) * b
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import (ConvSpec, ShapeError, SplitMix64, Tensor, batchnorm,
                     broadcast_to, conv2d, conv2d_transpose, conv3d,
                     conv3d_transpose, init_gaussian, pointwise)
from .engine.ops import RunningStats

_SCALES = (1.0, 0.5, 0.25)


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters; scale_factor shrinks T, S, widths."""

    latent_dim: int = 100
    frames: int = 32
    spatial: int = 64
    base_channels: int = 64
    scale_factor: float = 1.0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.scale_factor not in _SCALES:
            raise ValueError(f"scale_factor must be one of {_SCALES}")
        if self.spatial % 16 or self.spatial < 16:
            raise ValueError("spatial size must be a positive multiple of 16")
        if self.frames % 16 or self.frames < 16:
            raise ValueError("frame count must be a positive multiple of 16")
        if self.clip_size % 16:
            raise ValueError(
                f"scaled spatial size {self.clip_size} is not a multiple of 16")
        t = self.clip_frames
        if t % 16 and (t & (t - 1) or t > 16):
            raise ValueError(
                f"scaled frame count {t} is neither a multiple of 16 nor a "
                "power of two <= 16")

    @property
    def clip_frames(self) -> int:
        return int(round(self.frames * self.scale_factor))

    @property
    def clip_size(self) -> int:
        return int(round(self.spatial * self.scale_factor))

    @property
    def t0(self) -> int:
        t = self.clip_frames
        return t // 16 if t % 16 == 0 else 1

    @property
    def s0(self) -> int:
        return self.clip_size // 16

    @property
    def temporal_strides(self) -> tuple:
        """Stride of the time axis on each of the four upsampling layers."""
        doublings = int(np.log2(self.clip_frames // self.t0))
        return tuple(2 if i < doublings else 1 for i in range(4))

    @property
    def widths(self) -> tuple:
        """Channel widths of the four hidden stages, widest first."""
        base = max(int(round(self.base_channels * self.scale_factor)), 8)
        return tuple(min(base * (2 ** k), 512) for k in (3, 2, 1, 0))

    def clip_shape(self) -> tuple:
        return (3, self.clip_frames, self.clip_size, self.clip_size)

    def to_dict(self) -> dict:
        return {"latent_dim": self.latent_dim, "frames": self.frames,
                "spatial": self.spatial, "base_channels": self.base_channels,
                "scale_factor": self.scale_factor}

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


def _up_spec(cfg: NetConfig, layer: int, cin: int, cout: int) -> ConvSpec:
    """Transposed-conv spec for upsampling layer ``layer`` (0-based of 4)."""
    st = cfg.temporal_strides[layer]
    kt = 4 if st == 2 else 3
    return ConvSpec(kernel=(kt, 4, 4), stride=(st, 2, 2), padding=(1, 1, 1),
                    in_channels=cin, out_channels=cout)


def _down_spec(cfg: NetConfig, layer: int, cin: int, cout: int) -> ConvSpec:
    """Strided-conv spec mirroring upsampling layer ``3 - layer``."""
    st = cfg.temporal_strides[3 - layer]
    kt = 4 if st == 2 else 3
    return ConvSpec(kernel=(kt, 4, 4), stride=(st, 2, 2), padding=(1, 1, 1),
                    in_channels=cin, out_channels=cout)


class _Layer:
    """One convolution with optional batch norm and activation."""

    def __init__(self, name, spec, rng, transpose=False, rank=3,
                 norm=True, activation="relu"):
        self.name = name
        self.spec = spec
        self.transpose = transpose
        self.rank = rank
        self.activation = activation
        if transpose:
            wshape = (spec.in_channels, spec.out_channels) + spec.kernel
        else:
            wshape = (spec.out_channels, spec.in_channels) + spec.kernel
        self.w = init_gaussian(wshape, std=0.01, seed=rng.split(0).seed)
        self.b = Tensor(np.zeros(spec.out_channels, np.float32), requires_grad=True)
        if norm:
            self.gamma = Tensor(np.ones(spec.out_channels, np.float32), requires_grad=True)
            self.beta = Tensor(np.zeros(spec.out_channels, np.float32), requires_grad=True)
            self.stats = RunningStats.zeros(spec.out_channels)
        else:
            self.gamma = self.beta = self.stats = None

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        if self.rank == 3:
            op = conv3d_transpose if self.transpose else conv3d
        else:
            op = conv2d_transpose if self.transpose else conv2d
        y = op(x, self.spec, self.w, self.b)
        if self.gamma is not None:
            y = batchnorm(y, self.gamma, self.beta, mode, self.stats)
        if self.activation is not None:
            y = pointwise(self.activation, y)
        return y

    def params(self):
        out = [(self.name + ".w", self.w), (self.name + ".b", self.b)]
        if self.gamma is not None:
            out += [(self.name + ".gamma", self.gamma), (self.name + ".beta", self.beta)]
        return out

    def running_stats(self):
        return [(self.name, self.stats)] if self.stats is not None else []


class _Network:
    """Common parameter bookkeeping for the concrete networks below."""

    layers: list

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def param_tensors(self):
        return [t for _, t in self.params()]

    def running_stats(self):
        return [s for layer in self.layers for s in layer.running_stats()]

    def state_arrays(self) -> dict:
        out = {}
        for name, t in self.params():
            out[name] = t.data
        for name, st in self.running_stats():
            out[name + ".running_mean"] = st.mean
            out[name + ".running_var"] = st.var
        return out

    def load_state(self, arrays: dict) -> None:
        expected = set(self.state_arrays())
        got = set(arrays)
        if expected != got:
            missing = sorted(expected - got)[:3]
            extra = sorted(got - expected)[:3]
            raise ShapeError(
                f"parameter set mismatch (missing {missing}, unexpected {extra})")
        for name, t in self.params():
            arr = np.asarray(arrays[name], np.float32)
            if arr.shape != t.shape:
                raise ShapeError(
                    f"parameter {name} has shape {arr.shape}, expected {t.shape}")
            t.data = np.ascontiguousarray(arr)
        for name, st in self.running_stats():
            st.mean = np.asarray(arrays[name + ".running_mean"], np.float32).copy()
            st.var = np.asarray(arrays[name + ".running_var"], np.float32).copy()


def _latent_volume(z: Tensor, latent_dim: int) -> Tensor:
    if z.ndim == 1:
        z = z.reshape(1, z.shape[0])
    if z.ndim != 2 or z.shape[1] != latent_dim:
        raise ShapeError(f"latent input must be (batch, {latent_dim}), got {z.shape}")
    return z.reshape(z.shape[0], latent_dim, 1, 1, 1)


def _check_clip_batch(x: Tensor, cfg: NetConfig) -> Tensor:
    if x.ndim == 4:
        x = x.reshape((1,) + tuple(x.shape))
    if x.ndim != 5 or tuple(x.shape[1:]) != cfg.clip_shape():
        raise ShapeError(
            f"expected clip batch of shape (n,) + {cfg.clip_shape()}, got {x.shape}")
    return x


class OneStreamGenerator(_Network):
    """Latent code to video through five fractionally strided layers."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        rng = SplitMix64(seed)
        w = cfg.widths
        seed_spec = ConvSpec(kernel=(cfg.t0, cfg.s0, cfg.s0), stride=(1, 1, 1),
                             padding=(0, 0, 0), in_channels=cfg.latent_dim,
                             out_channels=w[0])
        self.layers = [
            _Layer("g1", seed_spec, rng.split(1), transpose=True),
            _Layer("g2", _up_spec(cfg, 0, w[0], w[1]), rng.split(2), transpose=True),
            _Layer("g3", _up_spec(cfg, 1, w[1], w[2]), rng.split(3), transpose=True),
            _Layer("g4", _up_spec(cfg, 2, w[2], w[3]), rng.split(4), transpose=True),
            _Layer("g5", _up_spec(cfg, 3, w[3], 3), rng.split(5),
                   transpose=True, norm=False, activation="tanh"),
        ]

    def forward(self, z: Tensor, mode: str = "train") -> Tensor:
        h = _latent_volume(z, self.cfg.latent_dim)
        for layer in self.layers:
            h = layer(h, mode)
        return h


@dataclass
class TwoStreamOutput:
    """Composed video plus the exposed foreground/background/mask parts."""

    video: Tensor
    foreground: Tensor
    background: Tensor
    mask: Tensor


class TwoStreamGenerator(_Network):
    """Foreground/mask trunk plus a static-background image pathway.

    The mask head shares the whole trunk with the foreground and differs
    only in its final layer, which has one output channel and a sigmoid.
    The background is a 2-D pathway producing a single image that is
    replicated over time, so wherever the mask turns the foreground off
    the video is static.
    """

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        rng = SplitMix64(seed)
        w = cfg.widths
        seed_spec = ConvSpec(kernel=(cfg.t0, cfg.s0, cfg.s0), stride=(1, 1, 1),
                             padding=(0, 0, 0), in_channels=cfg.latent_dim,
                             out_channels=w[0])
        self.trunk = [
            _Layer("t1", seed_spec, rng.split(1), transpose=True),
            _Layer("t2", _up_spec(cfg, 0, w[0], w[1]), rng.split(2), transpose=True),
            _Layer("t3", _up_spec(cfg, 1, w[1], w[2]), rng.split(3), transpose=True),
            _Layer("t4", _up_spec(cfg, 2, w[2], w[3]), rng.split(4), transpose=True),
        ]
        self.f_head = _Layer("f5", _up_spec(cfg, 3, w[3], 3), rng.split(5),
                             transpose=True, norm=False, activation="tanh")
        self.m_head = _Layer("m5", _up_spec(cfg, 3, w[3], 1), rng.split(6),
                             transpose=True, norm=False, activation="sigmoid")
        seed2d = ConvSpec(kernel=(cfg.s0, cfg.s0), stride=(1, 1), padding=(0, 0),
                          in_channels=cfg.latent_dim, out_channels=w[0])
        up2d = [ConvSpec(kernel=(4, 4), stride=(2, 2), padding=(1, 1),
                         in_channels=a, out_channels=b)
                for a, b in ((w[0], w[1]), (w[1], w[2]), (w[2], w[3]), (w[3], 3))]
        self.background = [
            _Layer("b1", seed2d, rng.split(7), transpose=True, rank=2),
            _Layer("b2", up2d[0], rng.split(8), transpose=True, rank=2),
            _Layer("b3", up2d[1], rng.split(9), transpose=True, rank=2),
            _Layer("b4", up2d[2], rng.split(10), transpose=True, rank=2),
            _Layer("b5", up2d[3], rng.split(11), transpose=True, rank=2,
                   norm=False, activation="tanh"),
        ]
        self.layers = self.trunk + [self.f_head, self.m_head] + self.background

    def forward(self, z: Tensor, mode: str = "train") -> TwoStreamOutput:
        cfg = self.cfg
        h = _latent_volume(z, cfg.latent_dim)
        for layer in self.trunk:
            h = layer(h, mode)
        f = self.f_head(h, mode)
        m = self.m_head(h, mode)
        b2 = _latent_volume(z, cfg.latent_dim).reshape(f.shape[0], cfg.latent_dim, 1, 1)
        for layer in self.background:
            b2 = layer(b2, mode)
        n, _, t, s, _ = f.shape
        b = broadcast_to(b2.reshape(n, 3, 1, s, s), (n, 3, t, s, s))
        video = m * f + (1.0 - m) * b
        return TwoStreamOutput(video=video, foreground=f, background=b2, mask=m)


class Discriminator(_Network):
    """Clip batch to one realism logit per clip; no output squashing."""

    def __init__(self, cfg: NetConfig, seed: int = 0, out_dim: int = 1,
                 final_activation=None):
        self.cfg = cfg
        self.out_dim = out_dim
        rng = SplitMix64(seed)
        w = cfg.widths
        head_spec = ConvSpec(kernel=(cfg.t0, cfg.s0, cfg.s0), stride=(1, 1, 1),
                             padding=(0, 0, 0), in_channels=w[0],
                             out_channels=out_dim)
        self.layers = [
            _Layer("d1", _down_spec(cfg, 0, 3, w[3]), rng.split(1),
                   norm=False, activation="leaky_relu"),
            _Layer("d2", _down_spec(cfg, 1, w[3], w[2]), rng.split(2),
                   activation="leaky_relu"),
            _Layer("d3", _down_spec(cfg, 2, w[2], w[1]), rng.split(3),
                   activation="leaky_relu"),
            _Layer("d4", _down_spec(cfg, 3, w[1], w[0]), rng.split(4),
                   activation="leaky_relu"),
            _Layer("d5", head_spec, rng.split(5), norm=False,
                   activation=final_activation),
        ]

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        h = _check_clip_batch(x, self.cfg)
        for layer in self.layers:
            h = layer(h, mode)
        n = h.shape[0]
        flat = h.reshape(n, self.out_dim)
        return flat.reshape(n) if self.out_dim == 1 else flat


class VideoEncoder(Discriminator):
    """Discriminator-shaped network producing a latent code per clip.

    Output is linear; the code space is whatever the decoder learns to
    use, and leaving it unbounded keeps the density model downstream
    honest about its spread.
    """

    def __init__(self, cfg: NetConfig, seed: int = 0):
        super().__init__(cfg, seed=seed, out_dim=cfg.latent_dim)


class FrameEncoder(_Network):
    """Single frame to latent code through five strided 2-D layers."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        rng = SplitMix64(seed)
        w = cfg.widths
        down = [ConvSpec(kernel=(4, 4), stride=(2, 2), padding=(1, 1),
                         in_channels=a, out_channels=b)
                for a, b in ((3, w[3]), (w[3], w[2]), (w[2], w[1]), (w[1], w[0]))]
        head = ConvSpec(kernel=(cfg.s0, cfg.s0), stride=(1, 1), padding=(0, 0),
                        in_channels=w[0], out_channels=cfg.latent_dim)
        self.layers = [
            _Layer("e1", down[0], rng.split(1), rank=2, norm=False,
                   activation="leaky_relu"),
            _Layer("e2", down[1], rng.split(2), rank=2, activation="leaky_relu"),
            _Layer("e3", down[2], rng.split(3), rank=2, activation="leaky_relu"),
            _Layer("e4", down[3], rng.split(4), rank=2, activation="leaky_relu"),
            _Layer("e5", head, rng.split(5), rank=2, norm=False, activation="tanh"),
        ]

    def forward(self, x0: Tensor, mode: str = "train") -> Tensor:
        s = self.cfg.clip_size
        if x0.ndim == 3:
            x0 = x0.reshape((1,) + tuple(x0.shape))
        if x0.ndim != 4 or tuple(x0.shape[1:]) != (3, s, s):
            raise ShapeError(
                f"expected frame batch of shape (n, 3, {s}, {s}), got {x0.shape}")
        h = x0
        for layer in self.layers:
            h = layer(h, mode)
        return h.reshape(h.shape[0], self.cfg.latent_dim)


def generate_one_stream(z: Tensor, net: OneStreamGenerator,
                        mode: str = "eval") -> Tensor:
    return net.forward(z, mode)


def generate_two_stream(z: Tensor, net: TwoStreamGenerator,
                        mode: str = "eval") -> TwoStreamOutput:
    return net.forward(z, mode)


def discriminate(x: Tensor, net: Discriminator, mode: str = "train") -> Tensor:
    return net.forward(x, mode)


def encode(x0: Tensor, net: FrameEncoder, mode: str = "eval") -> Tensor:
    return net.forward(x0, mode)
