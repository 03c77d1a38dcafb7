"""
Spectral cross-talk
===================

Meta-elements for one colour also convert some light of the other colours.
Integrating sensor sensitivity x conversion efficiency x display spectrum
gives a C x C matrix A; input channel c is blurred by sum_c' A[c', c] PSF[c'].
"""
import numpy as np

from metaconv.layout import build_target_psf, extract_feature_map
from metaconv.optical import sensor_from_psfs
from metaconv.sensor import NOISELESS
from metaconv.spectral import crosstalk_matrix, sample_curves, synth_pce
from metaconv.suffix import conv2d_same

np.set_printoptions(precision=3, suppress=True)

pce, spd, ssf = sample_curves()
print("bundled curves, normalised A:\n", crosstalk_matrix(pce, spd, ssf).normalized().entries)

# %%
# Narrow, well separated bands give an almost diagonal matrix; broad ones do not.
for width in (10.0, 60.0, 150.0):
    p = [synth_pce(c, width, 0.9) for c in (480, 560, 640)]
    s = [synth_pce(c, 40.0, 1.0, kind="SPD") for c in (480, 560, 640)]
    a = crosstalk_matrix(p, s, synth_pce(560, 400, 1.0, kind="SSF")).normalized().entries
    off = a[~np.eye(3, dtype=bool)].max()
    print(f"PCE width {width:5.0f} THz: largest off-diagonal {off:.3f}")

# %%
# How much does that cost in feature-map accuracy, with the exact tiled PSF?
rng = np.random.default_rng(3)
kernels = rng.normal(size=(4, 3, 3, 3))
target = build_target_psf(kernels, 8, 128)
scene = rng.uniform(size=(3, 16, 16))
ref = conv2d_same(scene, kernels)
for eps in (0.0, 0.1, 0.2, 0.4):
    a = (1 - eps) * np.eye(3) + eps
    sensor = sensor_from_psfs(scene, target.values, a, NOISELESS, target.layout.channel_gains())
    f = extract_feature_map(sensor, target.layout, 16)
    print(f"off-diagonal {eps:.1f}: feature error {np.linalg.norm(f - ref) / np.linalg.norm(ref):.3f}")
