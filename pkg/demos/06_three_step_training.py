"""
Three-step hybrid training
==========================

1. Train the first convolution layer and a small dense classifier digitally.
2. Tile the learned kernels into a target PSF and design the phase mask.
3. Fine-tune phase and classifier together through the simulated optics,
   with spectral cross-talk and sensor noise switched on.

Steps 1 and 2 are shared between an ideal run (no cross-talk) and a run with
overlapping spectra. Takes about a minute and a half.
"""
import logging

import numpy as np

from metaconv.trainer import ExperimentConfig, design_phase, load_data, train_digital, train_three_step

logging.basicConfig(level=logging.WARNING)
cfg = ExperimentConfig(seed=0)
train_x, train_y, _, _ = load_data(cfg)
kernels, net, losses = train_digital(cfg, train_x, train_y)
target, phase, trace = design_phase(cfg, kernels)
print(f"phase design: loss reduction {trace.reduction:.0f}x in {cfg.phase_iterations} iterations")
shared = (kernels, net, losses, target, phase, trace)

for crosstalk in ("ideal", "synthetic"):
    report = train_three_step(cfg.replace(crosstalk=crosstalk), pretrained=shared)
    print(f"\n{crosstalk} spectra, cross-talk matrix:\n{np.round(report.crosstalk, 3)}")
    print(report.summary())
