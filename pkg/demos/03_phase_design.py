"""
Designing the phase mask
========================

Gradient descent on the phase makes |F^-1{exp(i*phi)}|^2 approach the tiled
target. The analytic gradient needs two FFTs per channel and iteration.
"""
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from metaconv.fourier import psf_from_phase
from metaconv.layout import build_target_psf, extract_feature_map
from metaconv.optical import sensor_from_psfs
from metaconv.phaseopt import OptimizerConfig, optimize_phase
from metaconv.sensor import NOISELESS
from metaconv.suffix import conv2d_same

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)
rng = np.random.default_rng(2)
kernels = rng.normal(size=(8, 3, 3, 3))

# %%
# A phase-only mask cannot put all of its light into the tiles. Asking for
# 80% of the energy there leaves room for the stray light and gives a much
# better match inside the tiles than insisting on 100%.
for eff in (1.0, 0.8):
    target = build_target_psf(kernels, 8, 128, efficiency=eff)
    phase, trace = optimize_phase(target, OptimizerConfig(iterations=1000, seed=0))
    psf = psf_from_phase(phase)
    scene = rng.uniform(size=(3, 16, 16))
    sensor = sensor_from_psfs(scene, psf, np.eye(3), NOISELESS, target.layout.channel_gains())
    feats = extract_feature_map(sensor, target.layout, 16)
    ref = conv2d_same(scene, kernels)
    err = np.linalg.norm(feats - ref) / np.linalg.norm(ref)
    print(f"efficiency {eff}: loss reduction {trace.reduction:8.0f}x, "
          f"feature error {err * 100:5.2f}%, {trace.wall_time:.1f} s")
    plt.semilogy(trace.losses, label=f"efficiency {eff}")

plt.xlabel("iteration")
plt.ylabel("PSF loss")
plt.legend()
plt.savefig(os.path.join(OUT, "03_loss.png"))
