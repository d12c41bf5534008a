"""Adversarial training loops and the autoencoder baseline.

The core step alternates one discriminator update (real clips toward 1,
generated clips toward 0) with one generator update using the
non-saturating objective (generated clips toward 1). With a two-stream
generator the generator loss additionally carries a sparsity penalty
``lambda_mask * mean(|m|)`` on the mask, and in the conditional
future-prediction variant a reconstruction penalty
``lambda_rec * mse(x0, first generated frame)`` ties the clip to the
frame it was conditioned on.

Each step reports its loss components separately so the total can be
audited, plus wall time, as one JSON object per iteration.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import (checkpoint_from_networks, load_checkpoint,
                         restore_networks, save_checkpoint)
from .datasets import minibatch_indices
from .engine import (Adam, ShapeError, SplitMix64, Tensor, mean_abs_error,
                     mse, no_grad, stable_bce_with_logits)
from .nets import (Discriminator, FrameEncoder, NetConfig, OneStreamGenerator,
                   TwoStreamGenerator, TwoStreamOutput, VideoEncoder)

ARCHITECTURES = ("one-stream", "two-stream")


class TrainingDiverged(RuntimeError):
    """A loss went NaN/Inf; ``network`` names the side that produced it."""

    def __init__(self, network: str, value: float):
        super().__init__(f"{network} loss is not finite ({value})")
        self.network = network


@dataclass
class TrainConfig:
    """Optimization hyperparameters shared by all training entry points."""

    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    lambda_mask: float = 0.1
    lambda_rec: float = 1.0
    max_iterations: int = 1000
    seed: int = 0
    checkpoint_every: int = 0
    rec_l1: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch statistics)")
        for name in ("lr", "beta1", "lambda_mask", "lambda_rec"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_iterations < 0 or self.checkpoint_every < 0:
            raise ValueError("iteration counts must be non-negative")


@dataclass
class StepMetrics:
    """Losses for one step; g_loss == g_adv + sparsity + rec (audited)."""

    iteration: int
    d_loss: float
    g_loss: float
    sparsity: float
    rec: float
    wall_ms: float
    g_adv: float = 0.0

    def json_line(self) -> str:
        return json.dumps({
            "iter": self.iteration, "d_loss": self.d_loss,
            "g_loss": self.g_loss, "sparsity": self.sparsity,
            "rec": self.rec, "wall_ms": self.wall_ms})


@dataclass
class TrainState:
    """Networks, their optimizers, and the RNG streams of one run."""

    config: TrainConfig
    net_config: NetConfig
    generator: object
    discriminator: Discriminator
    opt_g: Adam
    opt_d: Adam
    rng: SplitMix64
    batch_rng: SplitMix64
    encoder: FrameEncoder | None = None
    iteration: int = 0

    @property
    def two_stream(self) -> bool:
        return isinstance(self.generator, TwoStreamGenerator)

    @property
    def conditional(self) -> bool:
        return self.encoder is not None


def _seeds(seed: int):
    base = SplitMix64(seed)
    return base.split(1), base.split(2), base.split(3), base.split(4), base.split(5)


def make_gan_state(config: TrainConfig, net_config: NetConfig,
                   arch: str = "two-stream",
                   conditional: bool = False) -> TrainState:
    """Fresh networks and optimizer state, deterministic per seed."""
    if arch not in ARCHITECTURES:
        raise ValueError(f"arch must be one of {ARCHITECTURES}, got {arch!r}")
    g_rng, d_rng, e_rng, z_rng, b_rng = _seeds(config.seed)
    gen_cls = TwoStreamGenerator if arch == "two-stream" else OneStreamGenerator
    generator = gen_cls(net_config, seed=g_rng.seed)
    discriminator = Discriminator(net_config, seed=d_rng.seed)
    encoder = FrameEncoder(net_config, seed=e_rng.seed) if conditional else None
    g_params = generator.param_tensors()
    if encoder is not None:
        g_params = g_params + encoder.param_tensors()
    opt_g = Adam(g_params, lr=config.lr, beta1=config.beta1)
    opt_d = Adam(discriminator.param_tensors(), lr=config.lr, beta1=config.beta1)
    return TrainState(config=config, net_config=net_config,
                      generator=generator, discriminator=discriminator,
                      opt_g=opt_g, opt_d=opt_d, rng=z_rng, batch_rng=b_rng,
                      encoder=encoder)


def parameter_digest(network) -> str:
    """SHA-256 over parameter names and bytes; detects any weight change."""
    h = hashlib.sha256()
    for name, t in network.params():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def _require_finite(value: float, network: str) -> float:
    if not math.isfinite(value):
        raise TrainingDiverged(network, value)
    return value


def _check_real_batch(real: np.ndarray, state: TrainState) -> np.ndarray:
    real = np.asarray(real, np.float32)
    want = state.net_config.clip_shape()
    if real.ndim != 5 or tuple(real.shape[1:]) != want:
        raise ShapeError(f"real batch must be (n,) + {want}, got {real.shape}")
    if real.shape[0] < 2:
        raise ShapeError("real batch needs n >= 2 for batch statistics")
    if float(real.min()) < -1.0 or float(real.max()) > 1.0:
        raise ValueError("real batch values outside [-1, 1]")
    return real


def latent_batch(state: TrainState, n: int) -> Tensor:
    """Standard-normal latent codes from the state's sampling stream."""
    dim = state.net_config.latent_dim
    return Tensor(state.rng.normal((n, dim)).astype(np.float32))


def _forward_generator(state: TrainState, z: Tensor, mode: str = "train"):
    out = state.generator.forward(z, mode)
    video = out.video if isinstance(out, TwoStreamOutput) else out
    return out, video


def discriminator_update(state: TrainState, real: np.ndarray,
                         fake: np.ndarray) -> float:
    """One Adam step on the discriminator; returns the pre-update loss."""
    real_t = Tensor(np.asarray(real, np.float32))
    fake_t = fake if isinstance(fake, Tensor) else Tensor(np.asarray(fake, np.float32))
    opt = state.opt_d
    opt.zero_grad()
    loss = (stable_bce_with_logits(state.discriminator.forward(real_t, "train"), 1.0)
            + stable_bce_with_logits(state.discriminator.forward(fake_t, "train"), 0.0))
    d_loss = _require_finite(loss.item(), "discriminator")
    loss.backward()
    opt.step()
    return d_loss


def generator_update(state: TrainState, z: Tensor,
                     first_frames: Tensor | None = None,
                     out: TwoStreamOutput | Tensor | None = None):
    """One Adam step on the generator (and encoder when conditional).

    Returns (g_loss, g_adv, sparsity, rec) as floats, computed at the
    pre-update parameters. ``out`` may carry an already-built forward
    graph for ``z`` to avoid recomputing it.
    """
    cfg = state.config
    state.opt_g.zero_grad()
    state.opt_d.zero_grad()
    if out is None:
        out, video = _forward_generator(state, z)
    else:
        video = out.video if isinstance(out, TwoStreamOutput) else out
    logits = state.discriminator.forward(video, "train")
    adv = stable_bce_with_logits(logits, 1.0)
    total = adv
    spars_f = 0.0
    if isinstance(out, TwoStreamOutput):
        spars = out.mask.abs().mean() * cfg.lambda_mask
        total = total + spars
        spars_f = spars.item()
    rec_f = 0.0
    if first_frames is not None:
        err = mean_abs_error if cfg.rec_l1 else mse
        rec = err(video[:, :, 0], first_frames) * cfg.lambda_rec
        total = total + rec
        rec_f = rec.item()
    g_loss = _require_finite(total.item(), "generator")
    total.backward()
    state.opt_g.step()
    state.opt_d.zero_grad()
    return g_loss, adv.item(), spars_f, rec_f


def gan_train_step(real_batch: np.ndarray, state: TrainState) -> StepMetrics:
    """One discriminator update then one generator update."""
    t0 = time.perf_counter()
    real = _check_real_batch(real_batch, state)
    z = latent_batch(state, real.shape[0])
    out, video = _forward_generator(state, z)
    d_loss = discriminator_update(state, real, video.detach())
    g_loss, g_adv, spars, _ = generator_update(state, z, out=out)
    state.iteration += 1
    return StepMetrics(iteration=state.iteration, d_loss=d_loss, g_loss=g_loss,
                       sparsity=spars, rec=0.0,
                       wall_ms=(time.perf_counter() - t0) * 1e3, g_adv=g_adv)


def future_train_step(first_frames: np.ndarray, full_clips: np.ndarray,
                      state: TrainState) -> StepMetrics:
    """Conditional step: the generator is driven by encoded first frames
    and additionally penalized for misreconstructing them."""
    if state.encoder is None:
        raise ValueError("state has no frame encoder; build with conditional=True")
    t0 = time.perf_counter()
    full = _check_real_batch(full_clips, state)
    x0 = np.asarray(first_frames, np.float32)
    if not np.array_equal(x0, full[:, :, 0]):
        raise ValueError("first_frames must equal frame 0 of full_clips")
    x0_t = Tensor(x0)
    z = state.encoder.forward(x0_t, "train")
    out, video = _forward_generator(state, z)
    d_loss = discriminator_update(state, full, video.detach())
    g_loss, g_adv, spars, rec = generator_update(state, z, first_frames=x0_t,
                                                 out=out)
    state.iteration += 1
    return StepMetrics(iteration=state.iteration, d_loss=d_loss, g_loss=g_loss,
                       sparsity=spars, rec=rec,
                       wall_ms=(time.perf_counter() - t0) * 1e3, g_adv=g_adv)


def _state_networks(state: TrainState) -> dict:
    nets = {"generator": state.generator, "discriminator": state.discriminator}
    if state.encoder is not None:
        nets["encoder"] = state.encoder
    return nets


def save_training_checkpoint(state: TrainState, path) -> None:
    ckpt = checkpoint_from_networks(
        state.net_config, _state_networks(state),
        optimizers={"generator": state.opt_g, "discriminator": state.opt_d},
        seed=state.config.seed, iteration=state.iteration)
    ckpt.meta["arch"] = "two-stream" if state.two_stream else "one-stream"
    ckpt.meta["conditional"] = state.conditional
    ckpt.meta["rng"] = {"z": [state.rng.seed, state.rng.counter],
                        "batch": [state.batch_rng.seed, state.batch_rng.counter]}
    save_checkpoint(path, ckpt)


def load_training_state(path, config: TrainConfig) -> TrainState:
    """Rebuild a TrainState (networks, optimizers, RNG position) from disk."""
    ckpt = load_checkpoint(path)
    state = make_gan_state(config, ckpt.config, arch=ckpt.meta.get("arch", "two-stream"),
                           conditional=bool(ckpt.meta.get("conditional", False)))
    restore_networks(ckpt, _state_networks(state),
                     optimizers={"generator": state.opt_g,
                                 "discriminator": state.opt_d})
    state.iteration = int(ckpt.meta.get("iteration", 0))
    rng_meta = ckpt.meta.get("rng")
    if rng_meta:
        state.rng = SplitMix64.from_state(*rng_meta["z"])
        state.batch_rng = SplitMix64.from_state(*rng_meta["batch"])
    return state


def run_gan_training(clips: np.ndarray, config: TrainConfig,
                     net_config: NetConfig, arch: str = "two-stream",
                     conditional: bool = False, log_stream=None,
                     checkpoint_dir=None, state: TrainState | None = None):
    """Drive ``max_iterations`` steps over a clip array.

    Returns (state, metrics list). ``log_stream`` receives one JSON line
    per iteration; ``checkpoint_dir`` gets periodic snapshots plus a
    ``final.tvg`` at the end when set.
    """
    clips = np.asarray(clips, np.float32)
    if clips.ndim != 5 or clips.shape[0] == 0:
        raise ShapeError(f"expected a non-empty (n,3,t,s,s) clip array, got {clips.shape}")
    if state is None:
        state = make_gan_state(config, net_config, arch, conditional)
    batches = minibatch_indices(state.batch_rng, clips.shape[0], config.batch_size)
    history = []
    for _ in range(config.max_iterations):
        batch = clips[next(batches)]
        if state.conditional:
            metrics = future_train_step(batch[:, :, 0], batch, state)
        else:
            metrics = gan_train_step(batch, state)
        history.append(metrics)
        if log_stream is not None:
            log_stream.write(metrics.json_line() + "\n")
        if (checkpoint_dir and config.checkpoint_every
                and state.iteration % config.checkpoint_every == 0):
            save_training_checkpoint(
                state, os.path.join(checkpoint_dir, f"ckpt-{state.iteration:06d}.tvg"))
    if checkpoint_dir:
        save_training_checkpoint(state, os.path.join(checkpoint_dir, "final.tvg"))
    return state, history


@dataclass
class AutoencoderResult:
    encoder: VideoEncoder
    decoder: TwoStreamGenerator
    metrics: list = field(default_factory=list)

    @property
    def losses(self):
        return [m.rec for m in self.metrics]


def train_autoencoder(clips: np.ndarray, config: TrainConfig,
                      net_config: NetConfig, log_stream=None) -> AutoencoderResult:
    """Minimize mean squared reconstruction error over the clip set.

    The encoder mirrors the discriminator but emits a latent code; the
    decoder is the two-stream generator, so reconstructions stay in
    [-1, 1] by construction.
    """
    clips = np.asarray(clips, np.float32)
    if clips.ndim != 5 or clips.shape[0] == 0:
        raise ShapeError(f"expected a non-empty (n,3,t,s,s) clip array, got {clips.shape}")
    e_rng, d_rng, _, _, b_rng = _seeds(config.seed)
    encoder = VideoEncoder(net_config, seed=e_rng.seed)
    decoder = TwoStreamGenerator(net_config, seed=d_rng.seed)
    opt = Adam(encoder.param_tensors() + decoder.param_tensors(),
               lr=config.lr, beta1=config.beta1)
    batches = minibatch_indices(b_rng, clips.shape[0], config.batch_size)
    result = AutoencoderResult(encoder=encoder, decoder=decoder)
    for i in range(config.max_iterations):
        t0 = time.perf_counter()
        x = Tensor(clips[next(batches)])
        z = encoder.forward(x, "train")
        out = decoder.forward(z, "train")
        loss = mse(out.video, x)
        val = _require_finite(loss.item(), "autoencoder")
        opt.zero_grad()
        loss.backward()
        opt.step()
        m = StepMetrics(iteration=i + 1, d_loss=0.0, g_loss=val, sparsity=0.0,
                        rec=val, wall_ms=(time.perf_counter() - t0) * 1e3)
        result.metrics.append(m)
        if log_stream is not None:
            log_stream.write(m.json_line() + "\n")
    return result


def reconstruct(result: AutoencoderResult, clips: np.ndarray) -> np.ndarray:
    """Eval-mode round trip through the trained autoencoder."""
    with no_grad():
        z = result.encoder.forward(Tensor(np.asarray(clips, np.float32)), "eval")
        out = result.decoder.forward(z, "eval")
    return out.video.data
