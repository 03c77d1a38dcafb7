import numpy as np
import pytest

from conftest import central_diff, loop_conv_crop, max_rel_err
from metaconv.errors import InvalidInputError
from metaconv.fourier import TWO_PI, centered_ifft2, psf_from_phase
from metaconv.layout import build_target_psf, extract_feature_map
from metaconv.optical import (TiledOptics, channel_planes, effective_psfs, embed_scene,
                              optical_backward, optical_forward, sensor_from_psfs)
from metaconv.sensor import NOISELESS, NoiseModel, derive_seed
from metaconv.suffix import conv2d_same


def rand_phase(rng, c, n):
    return rng.uniform(0, TWO_PI, (c, n, n))


def test_identity_mixing(rng):
    ph = rand_phase(rng, 3, 8)
    np.testing.assert_array_equal(effective_psfs(ph, np.eye(3)), psf_from_phase(ph))


def test_single_row_mixing(rng):
    ph = rand_phase(rng, 3, 8)
    a = np.zeros((3, 3))
    a[1] = [0.5, 2.0, 3.0]
    eff = effective_psfs(ph, a)
    psf1 = psf_from_phase(ph)[1]
    for c in range(3):
        np.testing.assert_allclose(eff[c], a[1, c] * psf1, rtol=1e-14)


def test_random_mixing_matches_weighted_sum(rng):
    ph = rand_phase(rng, 3, 8)
    a = rng.uniform(size=(3, 3))
    psf = psf_from_phase(ph)
    oracle = np.zeros_like(psf)
    for c in range(3):
        for cp in range(3):
            oracle[c] += a[cp, c] * psf[cp]
    np.testing.assert_allclose(effective_psfs(ph, a), oracle, rtol=1e-12)


def test_mixing_shape_mismatch(rng):
    with pytest.raises(InvalidInputError):
        effective_psfs(rand_phase(rng, 3, 8), np.eye(2))


def test_black_scene(rng):
    out = optical_forward(np.zeros((3, 4, 4)), rand_phase(rng, 3, 16), np.eye(3))
    assert not out.values.any()


def test_delta_scene_reproduces_tiled_psf(rng):
    t = build_target_psf(rng.normal(size=(4, 3, 3, 3)), 3, 64)
    out = sensor_from_psfs(np.ones((3, 1, 1)), t.values, np.eye(3))
    np.testing.assert_allclose(out.values, t.values.sum(axis=0), atol=1e-9 * t.values.max())


def test_linear_convolution_matches_loop_oracle(rng):
    n = 8
    scene = rng.uniform(size=(2, 5, 5))
    psf = rng.uniform(size=(2, n, n))
    planes = channel_planes(scene, psf)
    emb = embed_scene(scene, n)
    for c in range(2):
        np.testing.assert_allclose(planes[c], loop_conv_crop(emb[c], psf[c]), rtol=1e-12, atol=1e-13)


def test_forward_linear_in_scene(rng):
    ph = rand_phase(rng, 3, 16)
    a = rng.uniform(size=(3, 3))
    x, y = rng.uniform(size=(2, 3, 6, 6))
    f = lambda s: optical_forward(s, ph, a).values  # noqa: E731
    np.testing.assert_allclose(f(2.0 * x + 0.5 * y), 2.0 * f(x) + 0.5 * f(y), rtol=1e-10, atol=1e-10)


def _sensor_loss(scene, a, g):
    return lambda phase: float(np.sum(g * optical_forward(scene, phase, a).values))


def test_backward_zero_upstream(rng):
    ph = rand_phase(rng, 2, 8)
    grad = optical_backward(rng.uniform(size=(2, 4, 4)), ph, np.eye(2), np.zeros((8, 8)))
    assert not grad.any()


def test_backward_single_channel_finite_differences(rng):
    ph = rand_phase(rng, 1, 8)
    scene = rng.uniform(size=(1, 4, 4))
    g = rng.normal(size=(8, 8))
    grad = optical_backward(scene, ph, np.eye(1), g)
    fd = central_diff(_sensor_loss(scene, np.eye(1), g), ph, h=1e-5)
    assert max_rel_err(grad, fd) < 1e-5


def test_backward_multichannel_crosstalk_finite_differences(rng):
    ph = rand_phase(rng, 3, 8)
    scene = rng.uniform(size=(3, 5, 5))
    a = rng.uniform(size=(3, 3))
    g = rng.normal(size=(8, 8))
    grad = optical_backward(scene, ph, a, g)
    fd = central_diff(_sensor_loss(scene, a, g), ph, h=1e-5)
    assert max_rel_err(grad, fd) < 1e-5


def test_backward_scales_with_crosstalk(rng):
    ph = rand_phase(rng, 2, 8)
    scene = rng.uniform(size=(2, 4, 4))
    g = rng.normal(size=(8, 8))
    g1 = optical_backward(scene, ph, np.eye(2), g)
    g2 = optical_backward(scene, ph, 2 * np.eye(2), g)
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-13, atol=1e-13)


def _jvp(scene, phase, a, dphase):
    """Forward-mode derivative of the sensor image, from first principles."""
    t = np.exp(1j * phase)
    u = centered_ifft2(t)
    du = centered_ifft2(1j * t * dphase)
    dpsf = 2 * np.real(np.conj(u) * du)
    deff = np.einsum("pc,pxy->cxy", a, dpsf)
    emb = embed_scene(scene, phase.shape[-1])
    return sum(loop_conv_crop(emb[c], deff[c]) for c in range(len(scene)))


def test_adjoint_inner_product(rng):
    for _ in range(3):
        ph = rand_phase(rng, 2, 8)
        scene = rng.uniform(size=(2, 4, 4))
        a = rng.uniform(size=(2, 2))
        dphi = rng.normal(size=ph.shape)
        g = rng.normal(size=(8, 8))
        lhs = np.sum(_jvp(scene, ph, a, dphi) * g)
        rhs = np.sum(dphi * optical_backward(scene, ph, a, g))
        assert abs(lhs - rhs) <= 1e-8 * abs(lhs)


def test_backward_shape_mismatch(rng):
    with pytest.raises(InvalidInputError):
        optical_backward(np.ones((1, 4, 4)), rand_phase(rng, 1, 8), np.eye(1), np.zeros((4, 4)))


def test_negative_scene_rejected(rng):
    with pytest.raises(InvalidInputError):
        optical_forward(-np.ones((1, 4, 4)), rand_phase(rng, 1, 8), np.eye(1))


def _setup(rng, n_kernels=4, pad=8, n=128, s=16):
    k = rng.normal(size=(n_kernels, 3, 3, 3))
    t = build_target_psf(k, pad, n)
    scenes = rng.uniform(size=(5, 3, s, s))
    return k, t, scenes


def test_crosstalk_monotone_degradation(rng):
    k, t, scenes = _setup(rng)
    scene = scenes[0]
    oracle = conv2d_same(scene, k)
    errs = []
    for eps in (0.0, 0.1, 0.2):
        a = np.full((3, 3), eps) + (1 - eps) * np.eye(3)
        sensor = sensor_from_psfs(scene, t.values, a, NOISELESS, t.layout.channel_gains())
        f = extract_feature_map(sensor, t.layout, 16)
        errs.append(np.linalg.norm(f - oracle) / np.linalg.norm(oracle))
    assert errs[0] < 1e-10 < errs[1] < errs[2]


def test_tiled_matches_full_plane_with_noise(rng):
    k, t, scenes = _setup(rng)
    a = np.eye(3) + 0.1 * rng.uniform(size=(3, 3))
    noise = NoiseModel(0.0, 0.05, seed=4)
    gains = t.layout.channel_gains()
    optics = TiledOptics(t.layout, 16, a, gains, noise)
    ids = [3, 17, 100, 5, 9]
    feats, _ = optics.forward(scenes, t.values, ids)
    for b, sid in enumerate(ids):
        sensor = sensor_from_psfs(scenes[b], t.values, a, noise.with_seed(derive_seed(4, sid)), gains)
        ref = extract_feature_map(sensor, t.layout, 16)
        assert max_rel_err(feats[b], ref) < 1e-10


def test_tiled_backward_finite_differences(rng):
    k = rng.normal(size=(2, 3, 3, 3))
    t = build_target_psf(k, 2, 16)
    scenes = rng.uniform(size=(2, 3, 4, 4))
    a = np.eye(3) + 0.2 * rng.uniform(size=(3, 3))
    optics = TiledOptics(t.layout, 4, a, None, NoiseModel(0.0, 0.05, seed=1))
    g = rng.normal(size=(2, 2, 4, 4))
    psfs = rng.uniform(0.5, 1.5, size=(3, 16, 16))

    def loss(p):
        return float(np.sum(g * optics.forward(scenes, p, [0, 1])[0]))

    _, cache = optics.forward(scenes, psfs, [0, 1])
    grad = optics.backward(g, cache)
    fd = central_diff(loss, psfs, h=1e-6)
    assert max_rel_err(grad, fd) < 1e-6


def test_tiled_phase_gradient_finite_differences(rng):
    k = rng.normal(size=(2, 1, 3, 3))
    t = build_target_psf(k, 2, 16)
    scene = rng.uniform(size=(1, 1, 4, 4))
    optics = TiledOptics(t.layout, 4, np.eye(1))
    g = rng.normal(size=(1, 2, 4, 4))
    ph = rand_phase(rng, 1, 16)

    def loss(p):
        return float(np.sum(g * optics.forward(scene, psf_from_phase(p))[0]))

    _, cache = optics.forward(scene, psf_from_phase(ph))
    grad = optics.phase_gradient(ph, optics.backward(g, cache))
    assert max_rel_err(grad, central_diff(loss, ph, h=1e-6)) < 1e-5
