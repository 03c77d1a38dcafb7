import numpy as np
import pytest


def max_rel_err(a, b):
    """Largest absolute deviation scaled by the largest reference magnitude."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def central_diff(f, x, h=1e-6, index=None):
    """Central finite-difference gradient of scalar ``f`` at ``x`` (optionally at selected flat indices)."""
    x = np.array(x, dtype=float)
    flat = x.reshape(-1)
    idx = range(flat.size) if index is None else index
    g = np.zeros(flat.size)
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(x.shape)


def dft2_brute(x):
    """Unitary 2-D inverse DFT by explicit double sums (no FFT)."""
    n, m = x.shape
    out = np.zeros((n, m), dtype=complex)
    for p in range(n):
        for q in range(m):
            acc = 0j
            for a in range(n):
                for b in range(m):
                    acc += x[a, b] * np.exp(2j * np.pi * (p * a / n + q * b / m))
            out[p, q] = acc / np.sqrt(n * m)
    return out


def loop_conv_crop(plane, psf):
    """Linear convolution of an ``(n, n)`` plane with an ``(n, n)`` PSF, cropped to the central ``n x n``."""
    n = plane.shape[0]
    h = n // 2
    out = np.zeros((n, n))
    for y in range(n):
        for x in range(n):
            acc = 0.0
            for a in range(n):
                for b in range(n):
                    i, j = y + h - a, x + h - b
                    if 0 <= i < n and 0 <= j < n:
                        acc += plane[a, b] * psf[i, j]
            out[y, x] = acc
    return out


def loop_conv_same(scene, kernels):
    """Direct-loop 'same' convolution ``(C, S, S) * (K, C, k, k) -> (K, S, S)``."""
    c, s, _ = scene.shape
    nk, _, k, _ = kernels.shape
    h = k // 2
    out = np.zeros((nk, s, s))
    for j in range(nk):
        for y in range(s):
            for x in range(s):
                acc = 0.0
                for ch in range(c):
                    for u in range(k):
                        for v in range(k):
                            yy, xx = y + h - u, x + h - v
                            if 0 <= yy < s and 0 <= xx < s:
                                acc += scene[ch, yy, xx] * kernels[j, ch, u, v]
                out[j, y, x] = acc
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
