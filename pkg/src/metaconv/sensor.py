"""Monochrome sensor capture with signal-proportional Gaussian noise."""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian noise with mean ``mean`` and per-element std ``proportionality * |signal|``."""

    mean: float = 0.0
    proportionality: float = 0.01
    seed: int = 0
    clamp: bool = False

    def __post_init__(self):
        if not self.proportionality >= 0:
            raise InvalidInputError(f"noise proportionality must be >= 0, got {self.proportionality}")

    def with_seed(self, seed):
        return NoiseModel(self.mean, self.proportionality, int(seed), self.clamp)


NOISELESS = NoiseModel(proportionality=0.0)


@dataclass
class SensorImage:
    values: np.ndarray
    metadata: dict = field(default_factory=dict)


def derive_seed(*keys):
    """Deterministic 64-bit seed from integer keys, e.g. ``(run_seed, sample_id)``."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def standard_normal(shape, seed):
    """Standard normal draws from a counter-based generator keyed by ``seed``.

    Element ``i`` (C order) is always the ``i``-th draw of the Philox stream for
    that key, so blocks of the array can be regenerated independently.
    """
    gen = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    return gen.standard_normal(shape)


def sample_noise(shape, signal, noise):
    """Noise array ``mean + proportionality*|signal|*z`` with ``z`` seeded by ``noise.seed``."""
    signal = np.asarray(signal, dtype=float)
    if tuple(shape) != signal.shape:
        raise InvalidInputError(f"shape {tuple(shape)} does not match signal {signal.shape}")
    if noise.proportionality == 0:
        return np.full(signal.shape, float(noise.mean))
    z = standard_normal(signal.shape, noise.seed)
    return noise.mean + noise.proportionality * np.abs(signal) * z


def capture(channel_contributions, noise=NOISELESS):
    """Sum per-channel intensity planes on the detector and add noise.

    The spectral sensitivity is already folded into the cross-talk weights that
    produced ``channel_contributions``, shape ``(C, H, W)``.
    """
    planes = np.asarray(channel_contributions, dtype=float)
    if planes.ndim == 2:
        planes = planes[None]
    if not np.all(np.isfinite(planes)):
        raise InvalidInputError("channel contributions contain non-finite values")
    signal = planes.sum(axis=0) if len(planes) > 1 else planes[0].copy()
    out = signal + sample_noise(signal.shape, signal, noise)
    if noise.clamp:
        out = np.maximum(out, 0.0)
    meta = {
        "seed": noise.seed,
        "noise_mean": noise.mean,
        "noise_proportionality": noise.proportionality,
    }
    return SensorImage(out, meta)
