"""Architecture shape chains, composition identities, parameter sharing."""
import numpy as np
import pytest

from tinyvidgan.engine import ShapeError, SplitMix64, Tensor, no_grad
from tinyvidgan.nets import (Discriminator, FrameEncoder, NetConfig,
                             OneStreamGenerator, TwoStreamGenerator,
                             VideoEncoder, discriminate, encode,
                             generate_one_stream, generate_two_stream)


def _z(n, cfg, seed=0):
    return Tensor(SplitMix64(seed).normal((n, cfg.latent_dim)).astype(np.float32))


def _layer_shapes(layers, x, mode="eval"):
    shapes = []
    with no_grad():
        for layer in layers:
            x = layer(x, mode)
            shapes.append(tuple(x.shape[1:]))
    return shapes


def test_generator_chain_at_scale_1():
    cfg = NetConfig()
    g = OneStreamGenerator(cfg, seed=0)
    x = Tensor(np.zeros((1, 100, 1, 1, 1), np.float32))
    assert _layer_shapes(g.layers, x) == [
        (512, 2, 4, 4), (256, 4, 8, 8), (128, 8, 16, 16),
        (64, 16, 32, 32), (3, 32, 64, 64)]


def test_discriminator_chain_at_scale_1():
    cfg = NetConfig()
    d = Discriminator(cfg, seed=0)
    x = Tensor(np.zeros((2, 3, 32, 64, 64), np.float32))
    assert _layer_shapes(d.layers, x) == [
        (64, 16, 32, 32), (128, 8, 16, 16), (256, 4, 8, 8),
        (512, 2, 4, 4), (1, 1, 1, 1)]


def test_frame_encoder_chain_at_scale_1():
    cfg = NetConfig()
    e = FrameEncoder(cfg, seed=0)
    x = Tensor(np.zeros((2, 3, 64, 64), np.float32))
    assert _layer_shapes(e.layers, x) == [
        (64, 32, 32), (128, 16, 16), (256, 8, 8), (512, 4, 4), (100, 1, 1)]


@pytest.mark.parametrize("scale", [1.0, 0.5, 0.25])
def test_five_layers_land_on_configured_shape(scale):
    cfg = NetConfig(scale_factor=scale)
    g = OneStreamGenerator(cfg, seed=1)
    with no_grad():
        v = generate_one_stream(_z(2, cfg), g)
    assert tuple(v.shape) == (2,) + cfg.clip_shape()
    assert len(g.layers) == 5
    d = Discriminator(cfg, seed=2)
    with no_grad():
        logits = discriminate(v, d, mode="eval")
    assert tuple(logits.shape) == (2,)
    assert np.all(np.isfinite(logits.data))


def test_zero_latent_gives_in_range_output():
    cfg = NetConfig()
    g = OneStreamGenerator(cfg, seed=3)
    with no_grad():
        v = generate_one_stream(Tensor(np.zeros((1, 100), np.float32)), g)
    assert tuple(v.shape) == (1, 3, 32, 64, 64)
    assert v.data.min() >= -1.0 and v.data.max() <= 1.0


def test_generation_is_deterministic_in_eval():
    cfg = NetConfig(scale_factor=0.25)
    g = OneStreamGenerator(cfg, seed=4)
    z = _z(1, cfg, seed=9)
    with no_grad():
        a = generate_one_stream(z, g).data
        b = generate_one_stream(z, g).data
    assert np.array_equal(a, b)


def test_same_seed_same_init():
    cfg = NetConfig(scale_factor=0.25)
    a = OneStreamGenerator(cfg, seed=5)
    b = OneStreamGenerator(cfg, seed=5)
    for (_, ta), (_, tb) in zip(a.params(), b.params()):
        assert np.array_equal(ta.data, tb.data)


def _force_head(layer, bias_value):
    layer.w.data = np.zeros_like(layer.w.data)
    layer.b.data = np.full_like(layer.b.data, bias_value)


def test_mask_of_one_passes_foreground_through():
    cfg = NetConfig(scale_factor=0.25)
    g = TwoStreamGenerator(cfg, seed=6)
    _force_head(g.m_head, 200.0)  # sigmoid saturates to exactly 1.0
    with no_grad():
        out = generate_two_stream(_z(2, cfg), g)
    assert np.all(out.mask.data == 1.0)
    assert np.array_equal(out.video.data, out.foreground.data)


def test_mask_of_zero_freezes_every_frame():
    cfg = NetConfig(scale_factor=0.25)
    g = TwoStreamGenerator(cfg, seed=7)
    _force_head(g.m_head, -200.0)  # sigmoid underflows to exactly 0.0
    with no_grad():
        out = generate_two_stream(_z(2, cfg), g)
    assert np.all(out.mask.data == 0.0)
    frames = out.video.data
    for t in range(1, frames.shape[2]):
        assert np.array_equal(frames[:, :, t], frames[:, :, 0])


def test_constant_heads_compose_arithmetically():
    cfg = NetConfig(scale_factor=0.25)
    g = TwoStreamGenerator(cfg, seed=8)
    _force_head(g.m_head, 0.0)                    # sigmoid(0) = 0.5
    _force_head(g.f_head, float(np.arctanh(0.8)))
    _force_head(g.background[-1], float(np.arctanh(-0.2)))
    with no_grad():
        out = generate_two_stream(_z(1, cfg), g)
    assert np.allclose(out.video.data, 0.3, atol=1e-6)


def test_recomposition_is_bit_exact():
    cfg = NetConfig(scale_factor=0.25)
    g = TwoStreamGenerator(cfg, seed=9)
    with no_grad():
        out = generate_two_stream(_z(3, cfg), g)
    m, f = out.mask.data, out.foreground.data
    n, _, t, s, _ = f.shape
    b = np.ascontiguousarray(np.broadcast_to(
        out.background.data.reshape(n, 3, 1, s, s), f.shape))
    assert np.array_equal(m * f + (1.0 - m) * b, out.video.data)


def test_mask_range_for_random_params_and_z():
    cfg = NetConfig(scale_factor=0.25)
    for seed in range(5):
        g = TwoStreamGenerator(cfg, seed=seed)
        # blow up the mask head so the sigmoid sees large inputs too
        g.m_head.w.data = g.m_head.w.data * 100.0
        with no_grad():
            out = generate_two_stream(_z(2, cfg, seed=seed), g)
        assert out.mask.data.min() >= 0.0 and out.mask.data.max() <= 1.0
        assert out.video.data.min() >= -1.0 and out.video.data.max() <= 1.0


def test_trunk_is_shared_but_heads_are_not():
    cfg = NetConfig(scale_factor=0.25)
    g = TwoStreamGenerator(cfg, seed=10)
    z = _z(1, cfg, seed=3)
    with no_grad():
        base = generate_two_stream(z, g)
        g.trunk[1].w.data = g.trunk[1].w.data + 0.05
        bumped_trunk = generate_two_stream(z, g)
        g.m_head.w.data = g.m_head.w.data + 0.5
        bumped_mask = generate_two_stream(z, g)
    assert not np.array_equal(base.foreground.data, bumped_trunk.foreground.data)
    assert not np.array_equal(base.mask.data, bumped_trunk.mask.data)
    assert np.array_equal(bumped_trunk.foreground.data, bumped_mask.foreground.data)
    assert np.array_equal(bumped_trunk.background.data, bumped_mask.background.data)
    assert not np.array_equal(bumped_trunk.mask.data, bumped_mask.mask.data)


def test_duplicate_clip_gets_identical_logits_in_eval():
    cfg = NetConfig(scale_factor=0.25)
    d = Discriminator(cfg, seed=11)
    clip = SplitMix64(1).uniform((1, 3, 8, 16, 16), -1, 1).astype(np.float32)
    batch = Tensor(np.concatenate([clip, clip], axis=0))
    with no_grad():
        logits = discriminate(batch, d, mode="eval").data
    assert logits[0] == logits[1]


def test_frame_encoder_output_is_bounded_code():
    cfg = NetConfig(scale_factor=0.25)
    e = FrameEncoder(cfg, seed=12)
    x = Tensor(SplitMix64(2).uniform((4, 3, 16, 16), -1, 1).astype(np.float32))
    with no_grad():
        code = encode(x, e)
    assert tuple(code.shape) == (4, cfg.latent_dim)
    assert np.abs(code.data).max() <= 1.0


def test_video_encoder_code_shape():
    cfg = NetConfig(scale_factor=0.25)
    ve = VideoEncoder(cfg, seed=13)
    x = Tensor(SplitMix64(3).uniform((2, 3, 8, 16, 16), -1, 1).astype(np.float32))
    with no_grad():
        code = ve.forward(x, "eval")
    assert tuple(code.shape) == (2, cfg.latent_dim)


def test_config_validation():
    with pytest.raises(ValueError):
        NetConfig(scale_factor=0.3)
    with pytest.raises(ValueError):
        NetConfig(spatial=60)
    with pytest.raises(ValueError):
        NetConfig(frames=24)
    with pytest.raises(ValueError):
        NetConfig(latent_dim=0)
    # frames=48 works at scale 1 (three 16-frame blocks) but not at 1/4
    NetConfig(frames=48)
    with pytest.raises(ValueError):
        NetConfig(frames=48, scale_factor=0.25)


def test_bad_input_shapes_are_rejected():
    cfg = NetConfig(scale_factor=0.25)
    g = OneStreamGenerator(cfg, seed=14)
    d = Discriminator(cfg, seed=15)
    e = FrameEncoder(cfg, seed=16)
    with pytest.raises(ShapeError):
        g.forward(Tensor(np.zeros((1, 99), np.float32)))
    with pytest.raises(ShapeError):
        d.forward(Tensor(np.zeros((1, 3, 8, 16, 8), np.float32)))
    with pytest.raises(ShapeError):
        e.forward(Tensor(np.zeros((1, 3, 8, 8), np.float32)))
