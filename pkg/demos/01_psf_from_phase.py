"""
Point spread functions of Fourier-plane phase masks
===================================================

A phase-only mask in the Fourier plane of a 4-f system multiplies the field by
exp(i*phi). The image of a point source is then |F^-1{exp(i*phi)}|^2. This
script shows the basic facts the rest of the package leans on.
"""
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from metaconv.fourier import mask_geometry, phase_to_orientation, psf_from_phase

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)
N = 64

# %%
# A flat phase focuses all light into the centre pixel. With unitary FFTs
# the PSF always carries N**2 units of energy.
flat = psf_from_phase(np.zeros((N, N)))
print("flat phase: peak", flat.max(), "at", np.unravel_index(flat.argmax(), flat.shape),
      "sum", flat.sum())

# %%
# A linear phase ramp moves the spot (Fourier shift theorem).
col = np.arange(N)
ramp = np.broadcast_to(2 * np.pi * 5 * col / N, (N, N))
spot = psf_from_phase(ramp)
print("ramp of 5 cycles: spot at", np.unravel_index(spot.argmax(), spot.shape))

# %%
# A random phase scatters light into speckle, but the energy is unchanged.
rng = np.random.default_rng(0)
speckle = psf_from_phase(rng.uniform(0, 2 * np.pi, (N, N)))
print("random phase: sum", speckle.sum(), "max", speckle.max().round(2))

fig, ax = plt.subplots(1, 3, figsize=(10, 3.4))
for a, img, title in zip(ax, (flat, spot, speckle), ("flat", "ramp", "random")):
    a.imshow(img, cmap="magma")
    a.set_title(title)
    a.axis("off")
fig.tight_layout()
fig.savefig(os.path.join(OUT, "01_psfs.png"))

# %%
# Physical size of the mask: the display pitch d limits the highest spatial
# frequency, so the mask spans lambda*f/d, split into N phase pixels.
g = mask_geometry(wavelength=550e-9, focal_length=0.1, display_pitch=8e-6, mask_resolution=512)
print(f"mask extent {g.mask_extent * 1e3:.3f} mm, phase pixel {g.phase_pixel_size * 1e6:.3f} um")

# %%
# Geometric-phase meta-elements imprint twice their rotation angle, so the
# fabrication file stores phase/2 wrapped to [0, pi).
print("orientations of 0, pi, 3pi:", phase_to_orientation(np.array([0.0, np.pi, 3 * np.pi])))
