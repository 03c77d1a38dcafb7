"""Tiling signed convolution kernels into a nonnegative multi-channel target PSF.

Each kernel ``W[j]`` (shape ``(C, k, k)``) is split into a positive and a
negative sub-kernel. The ``2K`` sub-kernels are placed on a grid of
``tile_size = k + 2*pad`` tiles: positive tiles fill the top half of the grid,
negative tiles the bottom half, kernel index increasing row-major. After optical
capture the window under each positive tile minus the window under its negative
partner is the convolution output of that kernel.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, LayoutOverflowError, WindowOverlapError


def as_kernels(kernels):
    """Validate a kernel set and return it as a float ``(K, C, k, k)`` array."""
    kernels = np.asarray(kernels, dtype=float)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise InvalidInputError(f"kernels must be (K, C, k, k), got {kernels.shape}")
    if kernels.shape[2] % 2 == 0:
        raise InvalidInputError(f"kernel size must be odd, got {kernels.shape[2]}")
    if not np.all(np.isfinite(kernels)):
        raise InvalidInputError("kernels contain non-finite values")
    return kernels


def split_pos_neg(kernels):
    """Split signed weights into nonnegative parts with ``pos - neg == kernels``."""
    kernels = np.asarray(kernels, dtype=float)
    pos = np.maximum(kernels, 0.0)
    neg = np.maximum(-kernels, 0.0)
    return pos, neg


def grid_shape(num_tiles):
    """Most nearly square ``(rows, cols)`` grid with an even row count and ``rows*cols == num_tiles``."""
    best = None
    for rows in range(2, num_tiles + 1, 2):
        if num_tiles % rows:
            continue
        cols = num_tiles // rows
        key = (abs(rows - cols), rows)
        if best is None or key < best[0]:
            best = (key, rows, cols)
    if best is None:
        raise InvalidInputError(f"cannot arrange {num_tiles} tiles in an even number of rows")
    return best[1], best[2]


@dataclass
class TileLayout:
    """Where every sub-kernel tile sits in the ``N x N`` PSF plane.

    ``channel_scale[c]`` is the factor that brought channel ``c`` of the raw tiled
    kernels to total energy ``N**2``; ``normalization`` is the common factor left
    on the captured feature map once :meth:`channel_gains` are applied to the
    scene.
    """

    kernel_size: int
    pad: int
    grid_rows: int
    grid_cols: int
    mask_resolution: int
    tile_centers: np.ndarray
    polarity: np.ndarray
    kernel_index: np.ndarray
    channel_scale: np.ndarray = field(default_factory=lambda: np.ones(0))
    normalization: float = 1.0

    @property
    def tile_size(self):
        return self.kernel_size + 2 * self.pad

    @property
    def num_kernels(self):
        return len(self.tile_centers) // 2

    @property
    def channels(self):
        return len(self.channel_scale)

    def channel_gains(self):
        """Per-input-channel intensity gains that equalise the channel scales."""
        scale = np.asarray(self.channel_scale, dtype=float)
        gains = np.zeros_like(scale)
        ok = scale > 0
        gains[ok] = self.normalization / scale[ok]
        return gains

    def positive_centers(self):
        return self.tile_centers[self.polarity > 0][np.argsort(self.kernel_index[self.polarity > 0])]

    def negative_centers(self):
        return self.tile_centers[self.polarity < 0][np.argsort(self.kernel_index[self.polarity < 0])]


def tile_layout(num_kernels, kernel_size, pad, mask_resolution):
    """Place ``2*num_kernels`` tiles on a grid centred in the mask plane."""
    if num_kernels < 1 or kernel_size < 1 or pad < 0:
        raise InvalidInputError("num_kernels and kernel_size must be positive and pad nonnegative")
    if kernel_size % 2 == 0:
        raise InvalidInputError(f"kernel size must be odd, got {kernel_size}")
    n = int(mask_resolution)
    tile = kernel_size + 2 * pad
    rows, cols = grid_shape(2 * num_kernels)
    if rows * tile > n or cols * tile > n:
        raise LayoutOverflowError(
            f"{rows}x{cols} tiles of size {tile} need {rows * tile}x{cols * tile} pixels, "
            f"mask is {n}x{n}"
        )
    top = n // 2 - (rows * tile) // 2
    left = n // 2 - (cols * tile) // 2
    rr, cc = np.divmod(np.arange(rows * cols), cols)
    centers = np.stack([top + rr * tile + tile // 2, left + cc * tile + tile // 2], axis=1)
    half = rows * cols // 2
    polarity = np.where(np.arange(rows * cols) < half, 1, -1)
    kernel_index = np.arange(rows * cols) % half
    return TileLayout(kernel_size, pad, rows, cols, n, centers, polarity, kernel_index)


@dataclass
class TargetPsf:
    values: np.ndarray
    layout: TileLayout


def build_target_psf(kernels, pad, mask_resolution, efficiency=1.0):
    """Tile positive/negative sub-kernels into a ``(C, N, N)`` target PSF.

    Each channel is rescaled to total energy ``efficiency * N**2``. With
    ``efficiency=1`` that is the energy of any PSF made by a phase-only mask.
    A phase-only mask cannot concentrate all of it inside the tiles, though,
    so a slightly smaller target (0.8 in configs) leaves room for the stray
    light and is matched far more closely. The scales are kept in the layout.
    """
    kernels = as_kernels(kernels)
    nk, nc, k, _ = kernels.shape
    layout = tile_layout(nk, k, pad, mask_resolution)
    n = layout.mask_resolution
    pos, neg = split_pos_neg(kernels)
    target = np.zeros((nc, n, n))
    h = k // 2
    for (r, c), sign, j in zip(layout.tile_centers, layout.polarity, layout.kernel_index):
        sub = pos[j] if sign > 0 else neg[j]
        target[:, r - h:r + h + 1, c - h:c + h + 1] = sub
    mass = target.sum(axis=(1, 2))
    scale = np.zeros(nc)
    scale[mass > 0] = efficiency * n * n / mass[mass > 0]
    target *= scale[:, None, None]
    layout.channel_scale = scale
    layout.normalization = float(scale[scale > 0].min()) if np.any(scale > 0) else 1.0
    return TargetPsf(target, layout)


def window_slices(center, size):
    r, c = center
    r0, c0 = r - size // 2, c - size // 2
    return slice(r0, r0 + size), slice(c0, c0 + size)


def check_windows(layout, input_size):
    """Raise unless ``input_size`` windows around every tile are disjoint and in bounds."""
    if input_size > layout.tile_size:
        raise WindowOverlapError(
            f"window size {input_size} exceeds tile spacing {layout.tile_size}"
        )
    n = layout.mask_resolution
    lo = layout.tile_centers.min() - input_size // 2
    hi = layout.tile_centers.max() - input_size // 2 + input_size
    if lo < 0 or hi > n:
        raise WindowOverlapError(f"window size {input_size} runs off the {n}x{n} sensor")


def extract_feature_map(sensor, layout, input_size, denormalize=True):
    """Assemble a ``(K, S, S)`` feature map from a tiled sensor image.

    Crops the ``S x S`` window centred on each positive tile and subtracts the
    window of its negative partner. With ``denormalize`` the result is divided
    by ``layout.normalization`` so it is on the scale of the digital layer.
    """
    values = getattr(sensor, "values", sensor)
    values = np.asarray(values, dtype=float)
    check_windows(layout, input_size)
    pos_c = layout.positive_centers()
    neg_c = layout.negative_centers()
    out = np.empty((len(pos_c), input_size, input_size))
    for j, (pc, nc) in enumerate(zip(pos_c, neg_c)):
        out[j] = values[window_slices(pc, input_size)] - values[window_slices(nc, input_size)]
    if denormalize:
        out /= layout.normalization
    return out
