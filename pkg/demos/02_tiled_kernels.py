"""
Convolution kernels as a tiled PSF
==================================

Light intensities are nonnegative, so each signed kernel is split into a
positive and a negative part. The 2K parts are spread over a grid of padded
tiles; after imaging, the window under each positive tile minus the window
under its negative partner is the convolution with that kernel.
"""
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from metaconv.layout import build_target_psf, extract_feature_map
from metaconv.optical import sensor_from_psfs
from metaconv.sensor import NOISELESS
from metaconv.suffix import conv2d_same

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)
rng = np.random.default_rng(1)

kernels = rng.normal(size=(8, 3, 3, 3))  # 8 kernels over 3 colour channels
target = build_target_psf(kernels, pad=8, mask_resolution=128)
lay = target.layout
print(f"{len(lay.tile_centers)} tiles on a {lay.grid_rows}x{lay.grid_cols} grid, "
      f"tile size {lay.tile_size}")
print("per-channel energy:", target.values.sum(axis=(1, 2)))

plt.figure(figsize=(4, 4))
plt.imshow(target.values.sum(axis=0), cmap="gray")
plt.title("target PSF (sum over channels)")
plt.savefig(os.path.join(OUT, "02_target.png"))

# %%
# Using the target itself as the PSF (no phase design yet), the optical path
# reproduces the digital convolution to round-off. The channel gains undo the
# per-channel energy normalisation by dimming the display channels.
scene = rng.uniform(size=(3, 16, 16))
sensor = sensor_from_psfs(scene, target.values, np.eye(3), NOISELESS, lay.channel_gains())
optical = extract_feature_map(sensor, lay, 16)
digital = conv2d_same(scene, kernels)
err = np.linalg.norm(optical - digital) / np.linalg.norm(digital)
print(f"relative L2 between optical and digital feature maps: {err:.2e}")
