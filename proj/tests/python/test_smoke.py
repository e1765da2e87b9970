"""Python-side smoke tests over the pybind module."""

import numpy as np
import pytest

tedio = pytest.importorskip("tedio")

MICRO = {
    "frames": 4,
    "height": 6,
    "width": 6,
    "channels": 1,
    "d_model": 16,
    "blocks": 2,
    "heads": 2,
    "head_dim": 8,
    "cond_vocab": 16,
    "cond_tokens": 2,
}

SCENE = {
    "kind": "square",
    "size": 2.0,
    "start_y": 1.0,
    "start_x": 1.0,
    "vel_y": 0.0,
    "vel_x": 0.7,
    "intensity": 0.9,
    "background": -0.6,
}


def micro_latent(seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((4, 1, 6, 6)).astype(np.float32)


def test_forward_shape_and_determinism():
    model = tedio.Model(MICRO, seed=1)
    z = micro_latent()
    a = model.forward(z, cond=3, position=70)
    b = model.forward(z, cond=3, position=70)
    assert a.shape == (4, 1, 6, 6)
    np.testing.assert_array_equal(a, b)
    assert np.all(a == 0.0)  # zero-initialized head


def test_temporal_attention_is_row_stochastic():
    model = tedio.Model(MICRO, seed=1)
    maps = model.temporal_attention(micro_latent(), cond=0, position=50, block=1)
    assert maps.shape == (6 * 6 * 2, 4, 4)  # [H*W*N_h, F, F]
    assert maps.min() >= 0.0
    np.testing.assert_allclose(maps.sum(axis=-1), 1.0, atol=1e-5)


def test_variability_scores_frame_constant_zero():
    model = tedio.Model(MICRO, seed=1)
    z = micro_latent()
    z[:] = z[0]  # frame-constant
    s = model.variability_scores(z, cond=0, position=50, block=1)
    assert s.shape == (72,)
    assert np.abs(s).max() <= 1e-8


def test_training_reduces_loss_and_sampling_is_deterministic():
    model = tedio.Model(MICRO, seed=2)
    clips = np.stack([tedio.gen_clip(SCENE, 4, 6, 6) for _ in range(4)])
    losses = model.train(clips, classes=[0, 1, 2, 3], steps=40, lr=0.05, batch=2, seed=3)
    assert len(losses) == 40
    assert losses[-1] < losses[0]

    video_a, events_a = model.sample(cond=0, seed=5)
    video_b, _ = model.sample(cond=0, seed=5)
    np.testing.assert_array_equal(video_a, video_b)
    assert events_a == []

    tedio_cfg = {"block": 1, "k": 2, "eta": 0.01, "iters": 2, "ell": 3}
    video_t, events_t = model.sample(cond=0, seed=5, tedio=tedio_cfg)
    assert len(events_t) == 3 * 2
    assert video_t.shape == video_a.shape


def test_metrics_and_jitter():
    clip = tedio.gen_clip(SCENE, 4, 6, 6)
    assert clip.shape == (4, 1, 6, 6)
    const = np.zeros((4, 1, 6, 6), dtype=np.float32)
    assert tedio.flicker_score(const) == 0.0
    assert tedio.dynamic_proxy(const) == 0.0

    jittered = tedio.inject_jitter(clip, SCENE, "position_noise", amplitude=1.0, seed=7)
    assert tedio.flicker_score(jittered) > tedio.flicker_score(clip)

    assert tedio.separation_auroc([0.1, 0.2], [0.3, 0.4]) == 1.0
    assert tedio.separation_auroc([0.1, 0.3], [0.2, 0.4]) == 0.75


def test_tdt_round_trip(tmp_path):
    a = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    path = str(tmp_path / "t.tdt")
    tedio.write_tdt(path, a)
    np.testing.assert_array_equal(tedio.read_tdt(path), a)


def test_checkpoint_round_trip(tmp_path):
    model = tedio.Model(MICRO, seed=4)
    path = str(tmp_path / "ckpt.tdc")
    model.save(path)
    loaded = tedio.Model.load(path)
    z = micro_latent(1)
    np.testing.assert_array_equal(
        model.temporal_attention(z, 0, 50, 1), loaded.temporal_attention(z, 0, 50, 1)
    )


def test_errors_surface_as_python_exceptions():
    model = tedio.Model(MICRO, seed=1)
    with pytest.raises(ValueError):
        model.forward(micro_latent(), cond=99, position=50)
    with pytest.raises(IOError):
        tedio.Model.load("/nonexistent/ckpt.tdc")
