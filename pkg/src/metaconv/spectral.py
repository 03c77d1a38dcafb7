"""Sampled spectral curves and the channel cross-talk matrix.

Curves are functions of optical frequency in THz, linearly interpolated between
samples and zero outside their sampled support. The cross-talk matrix entry
``A[c', c]`` integrates sensor sensitivity x conversion efficiency of meta-element
set ``c'`` x emission spectrum of input channel ``c``.
"""
import csv
import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import InvalidInputError, ParseError

KINDS = ("PCE", "SPD", "SSF")

# FWHM -> standard deviation for a Gaussian
_FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass
class SpectralCurve:
    frequencies: np.ndarray
    values: np.ndarray
    kind: str = "PCE"

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        validate_curve(self.frequencies, self.values, self.kind)

    @property
    def support(self):
        return self.frequencies[0], self.frequencies[-1]

    def sample(self, x, side="right"):
        """Evaluate at ``x``; at the ends of the support use the one-sided limit ``side``."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        y = np.interp(x, self.frequencies, self.values)
        inside = (x >= lo) & (x < hi) if side == "right" else (x > lo) & (x <= hi)
        return np.where(inside, y, 0.0)

    def scaled(self, factor):
        return SpectralCurve(self.frequencies.copy(), self.values * factor, self.kind)


def validate_curve(frequencies, values, kind):
    if kind not in KINDS:
        raise InvalidInputError(f"unknown curve kind {kind!r}")
    if frequencies.ndim != 1 or frequencies.shape != values.shape:
        raise InvalidInputError("frequencies and values must be 1-D arrays of equal length")
    if len(frequencies) < 2:
        raise InvalidInputError("a curve needs at least 2 samples")
    if not (np.all(np.isfinite(frequencies)) and np.all(np.isfinite(values))):
        raise InvalidInputError("curve contains non-finite values")
    if np.any(np.diff(frequencies) <= 0):
        raise InvalidInputError("frequencies must be strictly ascending")
    if np.any(values < 0):
        raise InvalidInputError("curve values must be nonnegative")
    if kind in ("PCE", "SSF") and np.any(values > 1):
        raise InvalidInputError(f"{kind} values must lie in [0, 1]")


def load_curve(path, kind):
    """Read a two-column ``frequency_THz,value`` CSV; a header line is optional."""
    freqs, vals = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 columns, got {len(row)}", f"line {lineno}")
            try:
                f, v = float(row[0]), float(row[1])
            except ValueError:
                if lineno == 1 and not freqs:
                    continue  # header
                raise ParseError(f"malformed row {row!r}", f"line {lineno}") from None
            if freqs and f <= freqs[-1]:
                raise ParseError("frequencies must be strictly ascending", f"line {lineno}")
            if not np.isfinite(f) or not np.isfinite(v) or v < 0:
                raise ParseError(f"invalid value {row!r}", f"line {lineno}")
            if kind in ("PCE", "SSF") and v > 1:
                raise ParseError(f"{kind} value {v} outside [0, 1]", f"line {lineno}")
            freqs.append(f)
            vals.append(v)
    if len(freqs) < 2:
        raise ParseError(f"{path}: need at least 2 samples, found {len(freqs)}")
    return SpectralCurve(np.array(freqs), np.array(vals), kind)


def save_curve(curve, path):
    with open(path, "w", newline="") as fh:
        fh.write("frequency_THz,value\n")
        for f, v in zip(curve.frequencies, curve.values):
            fh.write(f"{float(f)!r},{float(v)!r}\n")


def synth_pce(center, width, peak, frequencies=None, kind="PCE"):
    """Gaussian bump of full width at half maximum ``width`` THz peaking at ``peak``.

    The default grid spans ``center +- 6*width`` with the centre on a sample.
    """
    if not 0 < peak <= 1 and kind != "SPD":
        raise InvalidInputError(f"peak must be in (0, 1], got {peak}")
    if width <= 0:
        raise InvalidInputError(f"width must be positive, got {width}")
    if frequencies is None:
        frequencies = center + width * np.linspace(-6.0, 6.0, 601)
    frequencies = np.asarray(frequencies, dtype=float)
    sigma = width * _FWHM_TO_SIGMA
    values = peak * np.exp(-0.5 * ((frequencies - center) / sigma) ** 2)
    if kind != "SPD":
        values = np.clip(values, 0.0, 1.0)
    return SpectralCurve(frequencies, values, kind)


def box_curve(lo, hi, value=1.0, kind="PCE"):
    """Constant ``value`` on ``[lo, hi]`` and zero elsewhere."""
    return SpectralCurve(np.array([lo, hi], dtype=float), np.array([value, value]), kind)


@dataclass
class CrossTalkMatrix:
    """``entries[c', c]``: weight of meta-element channel ``c'`` PSF on input channel ``c``."""

    entries: np.ndarray
    disjoint: bool = False

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def normalized(self):
        """Divide by the mean diagonal entry (a global exposure factor)."""
        d = np.mean(np.diag(self.entries))
        if d <= 0:
            raise InvalidInputError("cannot normalise a cross-talk matrix with zero diagonal")
        return CrossTalkMatrix(self.entries / d, self.disjoint)


def integration_grid(curves, points=1024):
    """Uniform grid over the union support merged with every curve's breakpoints."""
    lo = min(c.frequencies[0] for c in curves)
    hi = max(c.frequencies[-1] for c in curves)
    grid = np.linspace(lo, hi, int(points))
    return np.unique(np.concatenate([grid] + [c.frequencies for c in curves]))


def crosstalk_matrix(pce, spd, ssf, grid=1024):
    """Trapezoidal integration of ``SSF * PCE[c'] * SPD[c]`` on a shared grid.

    ``grid`` is a point count for the uniform part of the grid or an explicit
    ascending array. Curve breakpoints are merged into the grid and each
    interval uses one-sided limits at its ends, so products that are linear
    between breakpoints integrate exactly.
    """
    pce, spd = list(pce), list(spd)
    if len(pce) != len(spd):
        raise InvalidInputError(f"{len(pce)} PCE curves but {len(spd)} SPD curves")
    curves = pce + spd + [ssf]
    if np.ndim(grid) == 0:
        x = integration_grid(curves, grid)
    else:
        x = np.unique(np.asarray(grid, dtype=float))
    left, right = x[:-1], x[1:]

    def ends(curve):
        return curve.sample(left, "right"), curve.sample(right, "left")

    s_l, s_r = ends(ssf)
    p = [ends(c) for c in pce]
    q = [ends(c) for c in spd]
    dx = np.diff(x)
    nc = len(pce)
    a = np.empty((nc, nc))
    for i in range(nc):
        for j in range(nc):
            fl = s_l * p[i][0] * q[j][0]
            fr = s_r * p[i][1] * q[j][1]
            a[i, j] = np.sum(0.5 * dx * (fl + fr))
    disjoint = not np.any(a)
    if disjoint:
        warnings.warn("spectral curves have disjoint supports; cross-talk matrix is zero",
                      RuntimeWarning, stacklevel=2)
    return CrossTalkMatrix(a, disjoint)


def ideal_crosstalk(channels=3):
    return CrossTalkMatrix(np.eye(channels))


def sample_curves():
    """Bundled synthetic three-channel curves: ``(pce, spd, ssf)`` ordered red, green, blue."""
    root = resources.files("metaconv") / "data"
    out = {}
    for kind in ("pce", "spd"):
        out[kind] = []
        for band in ("red", "green", "blue"):
            with resources.as_file(root / f"{kind}_{band}.csv") as path:
                out[kind].append(load_curve(path, kind.upper()))
    with resources.as_file(root / "ssf.csv") as path:
        ssf = load_curve(path, "SSF")
    return out["pce"], out["spd"], ssf
