"""Simulated optical convolution layer and its gradient with respect to the phase.

The scene ``(C, S, S)`` is zero-embedded at the centre of the ``N x N`` object
plane and imaged with unit magnification. Input channel ``c`` is blurred by the
effective PSF ``sum_c' A[c', c] * PSF[c']`` (linear, not circular, convolution)
and the detector sums the channel planes.

:func:`optical_forward` / :func:`optical_backward` work on the full sensor
plane. :class:`TiledOptics` computes the same thing restricted to the tile
windows, which is what training uses.
"""
import numpy as np
from scipy import signal

from .errors import InvalidInputError
from .fourier import as_phase, image_field, psf_from_phase, psf_vjp
from .layout import check_windows, window_slices
from .sensor import NOISELESS, SensorImage, capture, derive_seed, standard_normal


def as_scene(scene):
    scene = np.asarray(getattr(scene, "values", scene), dtype=float)
    if scene.ndim == 2:
        scene = scene[None]
    if scene.ndim != 3:
        raise InvalidInputError(f"scene must be (C, S, S), got {scene.shape}")
    if not np.all(np.isfinite(scene)) or np.any(scene < 0):
        raise InvalidInputError("scene intensities must be finite and nonnegative")
    return scene


def _xtalk(xtalk, channels):
    a = np.asarray(xtalk, dtype=float)
    if a.shape != (channels, channels):
        raise InvalidInputError(f"cross-talk matrix {a.shape} does not match {channels} channels")
    return a


def mix_psfs(psfs, xtalk):
    """Effective PSF per input channel, ``eff[c] = sum_c' A[c', c] * psfs[c']``."""
    psfs = np.asarray(psfs, dtype=float)
    a = _xtalk(xtalk, len(psfs))
    return np.einsum("pc,pxy->cxy", a, psfs)


def effective_psfs(phase, xtalk):
    return mix_psfs(psf_from_phase(as_phase(phase)), xtalk)


def embed_scene(scene, n):
    """Place a ``(C, S, S)`` scene at the centre of an ``(C, n, n)`` zero plane."""
    c, s, _ = scene.shape
    if s > n:
        raise InvalidInputError(f"scene of size {s} does not fit a {n}x{n} plane")
    out = np.zeros((c, n, n))
    o = n // 2 - s // 2
    out[:, o:o + s, o:o + s] = scene
    return out


def _gained(scene, gains):
    if gains is None:
        return scene
    return scene * np.asarray(gains, dtype=float)[:, None, None]


def channel_planes(scene, eff):
    """Per-channel detector planes: linear convolution of each embedded scene channel with its PSF."""
    n = eff.shape[-1]
    emb = embed_scene(scene, n)
    full = signal.fftconvolve(emb, eff, mode="full", axes=(1, 2))
    h = n // 2
    return full[:, h:h + n, h:h + n]


def sensor_from_psfs(scene, psfs, xtalk, noise=NOISELESS, gains=None):
    """Capture of ``scene`` through per-channel PSFs ``psfs`` (bypasses the phase)."""
    scene = _gained(as_scene(scene), gains)
    eff = mix_psfs(psfs, xtalk)
    if len(eff) != len(scene):
        raise InvalidInputError(f"scene has {len(scene)} channels, PSFs have {len(eff)}")
    return capture(channel_planes(scene, eff), noise)


def optical_forward(scene, phase, xtalk, noise=NOISELESS, gains=None):
    """Sensor image of ``scene`` through the phase mask ``phase``.

    ``gains`` optionally scales input channel intensities (display brightness).
    """
    return sensor_from_psfs(scene, psf_from_phase(as_phase(phase)), xtalk, noise, gains)


def optical_backward(scene, phase, xtalk, upstream_gradient, gains=None):
    """Gradient with respect to ``phase`` of ``<upstream_gradient, sensor>`` (noise-free)."""
    scene = _gained(as_scene(scene), gains)
    phase = as_phase(phase)
    a = _xtalk(xtalk, len(phase))
    n = phase.shape[-1]
    g = np.asarray(upstream_gradient, dtype=float)
    if g.shape != (n, n):
        raise InvalidInputError(f"upstream gradient {g.shape} does not match sensor ({n}, {n})")
    emb = embed_scene(scene, n)
    # adjoint of the cropped linear convolution: correlate gradient with the scene
    corr = signal.fftconvolve(np.broadcast_to(g, emb.shape), emb[:, ::-1, ::-1],
                              mode="full", axes=(1, 2))
    o = n - 1 - n // 2
    grad_eff = corr[:, o:o + n, o:o + n]
    grad_psf = np.einsum("pc,cxy->pxy", a, grad_eff)
    return psf_vjp(phase, grad_psf)


class TiledOptics:
    """Optical layer evaluated only inside the tile windows of a layout.

    For an ``S x S`` scene the window around tile centre ``p`` only sees the
    effective PSF inside the ``(2S-1)``-wide patch centred on ``p``, so each
    window is a small circular convolution with that patch. Results match the
    full-plane path exactly, including noise (drawn on the full plane with the
    same per-sample seeds and gathered at the windows).
    """

    def __init__(self, layout, input_size, xtalk, gains=None, noise=NOISELESS):
        check_windows(layout, input_size)
        self.layout = layout
        self.s = int(input_size)
        self.n = layout.mask_resolution
        self.xtalk = np.asarray(xtalk, dtype=float)
        c = len(self.xtalk)
        self.gains = np.ones(c) if gains is None else np.asarray(gains, dtype=float)
        self.noise = noise
        pos, neg = layout.positive_centers(), layout.negative_centers()
        self.centers = np.concatenate([pos, neg])
        self.k = len(pos)
        self.fft_size = 2 * self.s  # >= 2S-1 avoids wrap-around in the kept block

    # --- helpers -------------------------------------------------------
    def _patches(self, plane):
        """``(T, C, 2S-1, 2S-1)`` patches of a ``(C, N, N)`` plane around each tile (zero outside)."""
        s = self.s
        padded = np.pad(plane, ((0, 0), (s, s), (s, s)))
        out = np.empty((len(self.centers), plane.shape[0], 2 * s - 1, 2 * s - 1))
        for t, (r, c) in enumerate(self.centers):
            out[t] = padded[:, r + 1:r + 2 * s, c + 1:c + 2 * s]
        return out

    def _scatter(self, patches):
        s, n = self.s, self.n
        padded = np.zeros((patches.shape[1], n + 2 * s, n + 2 * s))
        for t, (r, c) in enumerate(self.centers):
            padded[:, r + 1:r + 2 * s, c + 1:c + 2 * s] += patches[t]
        return padded[:, s:s + n, s:s + n]

    def _noise_field(self, seeds):
        z = np.empty((len(seeds), len(self.centers), self.s, self.s))
        for b, seed in enumerate(seeds):
            full = standard_normal((self.n, self.n), seed)
            for t, center in enumerate(self.centers):
                z[b, t] = full[window_slices(center, self.s)]
        return z

    def sample_seeds(self, sample_ids):
        return [derive_seed(self.noise.seed, i) for i in sample_ids]

    # --- forward / backward -------------------------------------------
    def forward(self, scenes, psfs, sample_ids=None):
        """Feature maps ``(B, K, S, S)`` for a batch of scenes ``(B, C, S, S)``.

        Returns ``(features, cache)``; pass the cache to :meth:`backward`.
        """
        scenes = np.asarray(scenes, dtype=float) * self.gains[None, :, None, None]
        s, L = self.s, self.fft_size
        eff = mix_psfs(psfs, self.xtalk)
        fp = np.fft.rfft2(self._patches(eff), s=(L, L))
        fi = np.fft.rfft2(scenes, s=(L, L))
        win = np.fft.irfft2(np.einsum("bcxy,tcxy->btxy", fi, fp), s=(L, L))[:, :, s - 1:2 * s - 1, s - 1:2 * s - 1]
        k_noise = self.noise.proportionality
        z = None
        if k_noise > 0:
            if sample_ids is None:
                sample_ids = range(len(scenes))
            z = self._noise_field(self.sample_seeds(sample_ids))
            out = win + self.noise.mean + k_noise * np.abs(win) * z
        else:
            out = win + self.noise.mean
        if self.noise.clamp:
            out = np.maximum(out, 0.0)
        feats = (out[:, :self.k] - out[:, self.k:]) / self.layout.normalization
        cache = {"fi": fi, "win": win, "z": z, "out": out}
        return feats, cache

    def backward(self, grad_features, cache):
        """Gradient of the loss with respect to the per-channel PSFs ``(C, N, N)``."""
        s, L = self.s, self.fft_size
        g = np.asarray(grad_features, dtype=float) / self.layout.normalization
        g_out = np.concatenate([g, -g], axis=1)
        if self.noise.clamp:
            g_out = g_out * (cache["out"] > 0)
        if cache["z"] is not None:
            g_out = g_out * (1.0 + self.noise.proportionality * np.sign(cache["win"]) * cache["z"])
        gw = np.zeros(g_out.shape[:2] + (L, L))
        gw[:, :, s - 1:2 * s - 1, s - 1:2 * s - 1] = g_out
        fg = np.fft.rfft2(gw)
        gp = np.fft.irfft2(np.einsum("bcxy,btxy->tcxy", np.conj(cache["fi"]), fg), s=(L, L))
        grad_eff = self._scatter(gp[:, :, :2 * s - 1, :2 * s - 1])
        return np.einsum("pc,cxy->pxy", self.xtalk, grad_eff)

    def phase_gradient(self, phase, grad_psf):
        return psf_vjp(phase, grad_psf, image_field(phase))


def sensor_image(values, layout=None):
    meta = {} if layout is None else {"normalization": layout.normalization}
    return SensorImage(np.asarray(values, dtype=float), meta)
