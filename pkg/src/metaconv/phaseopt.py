"""Gradient-descent design of a phase mask whose PSF matches a target.

The objective for each channel is ``||W - |F^-1{exp(i*phi)}|**2||_F**2``,
summed over channels. Its gradient needs two FFTs per channel (see
:func:`metaconv.fourier.psf_vjp`).
"""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidInputError
from .fourier import TWO_PI, as_phase, image_field, psf_vjp
from .optim import make_optimizer

log = logging.getLogger(__name__)


def _target_array(target, shape):
    w = np.asarray(getattr(target, "values", target), dtype=float)
    if w.ndim == 2:
        w = w[None]
    if w.shape != shape:
        raise InvalidInputError(f"target shape {w.shape} does not match phase {shape}")
    return w


def _residual(phase, target):
    u = image_field(phase)
    psf = u.real ** 2 + u.imag ** 2
    return psf - target, u


def psf_loss(phase, target):
    """Squared Frobenius distance between achieved and target PSFs, summed over channels."""
    phase = as_phase(phase)
    r, _ = _residual(phase, _target_array(target, phase.shape))
    return float(np.sum(r * r))


def psf_loss_gradient(phase, target):
    """Analytic gradient of :func:`psf_loss` with respect to the phase."""
    squeeze = np.ndim(phase) == 2
    phase = as_phase(phase)
    r, u = _residual(phase, _target_array(target, phase.shape))
    grad = psf_vjp(phase, 2.0 * r, u)
    return grad[0] if squeeze else grad


@dataclass
class OptimizerConfig:
    iterations: int = 2000
    step_rule: str = "adaptive-moment"
    learning_rate: float = 0.05
    seed: int = 0
    log_every: int = 100
    precision: str = "double"

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.step_rule not in ("adaptive-moment", "fixed"):
            raise InvalidInputError(f"unknown step rule {self.step_rule!r}")
        if self.precision not in ("double", "single"):
            raise InvalidInputError(f"precision must be 'double' or 'single', got {self.precision!r}")


@dataclass
class OptimizationTrace:
    """Loss before any update followed by the loss after each update."""

    losses: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def initial_loss(self):
        return self.losses[0]

    @property
    def final_loss(self):
        return self.losses[-1]

    @property
    def best_loss(self):
        return min(self.losses)

    @property
    def reduction(self):
        return self.initial_loss / self.best_loss if self.best_loss > 0 else np.inf

    def best_so_far(self):
        return np.minimum.accumulate(self.losses)


def random_phase(shape, seed):
    return np.random.default_rng(seed).uniform(0.0, TWO_PI, size=shape)


class _UnshiftedProblem:
    """Loss and gradient in FFT-native (unshifted) coordinates.

    Shifting is a permutation, so optimising ``ifftshift(phase)`` against
    ``ifftshift(target)`` is the same problem without four shifts per step.
    """

    def __init__(self, target, dtype):
        axes = (-2, -1)
        self.target = np.fft.ifftshift(target, axes=axes).astype(dtype)
        self.cdtype = np.complex64 if dtype == np.float32 else np.complex128
        self.t = np.empty(target.shape, dtype=self.cdtype)

    def loss_and_grad(self, psi):
        c, s = np.cos(psi), np.sin(psi)
        self.t.real = c
        self.t.imag = s
        u = np.fft.ifft2(self.t, norm="ortho").astype(self.cdtype, copy=False)
        r = u.real * u.real + u.imag * u.imag
        r -= self.target
        loss = float(np.sum(r * r, dtype=np.float64))
        u *= 2.0 * r
        back = np.fft.fft2(u, norm="ortho")
        grad = 2.0 * (c * back.imag - s * back.real)
        return loss, grad.astype(psi.dtype, copy=False)


def optimize_phase(target, config=None, initial_phase=None, checkpoint=None):
    """Minimise :func:`psf_loss` from a seeded uniform random start.

    Returns ``(best_phase, trace)``. ``checkpoint(iteration, phase)`` is called
    every ``config.log_every`` iterations if given. Raises
    :class:`DivergenceError` when the loss stays above ten times its initial
    value for 50 consecutive iterations.
    """
    config = config or OptimizerConfig()
    w = np.asarray(getattr(target, "values", target), dtype=float)
    squeeze = w.ndim == 2
    if squeeze:
        w = w[None]
    if initial_phase is None:
        phase = random_phase(w.shape, config.seed)
    else:
        phase = as_phase(initial_phase)
    w = _target_array(w, phase.shape)
    dtype = np.float32 if config.precision == "single" else np.float64
    problem = _UnshiftedProblem(w, dtype)
    axes = (-2, -1)
    params = {"psi": np.fft.ifftshift(phase, axes=axes).astype(dtype)}
    opt = make_optimizer(config.step_rule, config.learning_rate)
    trace = OptimizationTrace()
    t0 = time.perf_counter()
    best = params["psi"].copy()
    best_loss = np.inf
    above = 0
    for it in range(config.iterations + 1):
        loss, grad = problem.loss_and_grad(params["psi"])
        trace.losses.append(loss)
        if loss < best_loss:
            best_loss = loss
            best = params["psi"].copy()
        if loss > 10.0 * trace.losses[0]:
            above += 1
            if above >= 50:
                trace.wall_time = time.perf_counter() - t0
                raise DivergenceError(f"phase optimisation diverged at iteration {it}", trace)
        else:
            above = 0
        if config.log_every and it % config.log_every == 0:
            log.info("iteration %d loss %.6g", it, loss)
            if checkpoint is not None:
                checkpoint(it, np.fft.fftshift(params["psi"], axes=axes).astype(float))
        if it == config.iterations:
            break
        opt.step(params, {"psi": grad})
    trace.wall_time = time.perf_counter() - t0
    best = np.fft.fftshift(best, axes=axes).astype(float)
    return (best[0] if squeeze else best), trace
