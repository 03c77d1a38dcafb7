"""Simulated metasurface optical convolution.

Fourier-plane phase masks are designed so their point spread function (PSF)
reproduces a bank of tiled convolution kernels; the resulting optical layer is
simulated with spectral cross-talk and sensor noise and trained jointly with a
small digital network.
"""
from .errors import (DivergenceError, InvalidInputError, LayoutOverflowError, ParseError,
                     WindowOverlapError)
from .fourier import (MaskGeometry, mask_geometry, phase_to_orientation, psf_from_phase,
                      transfer_function)
from .layout import (TargetPsf, TileLayout, build_target_psf, check_windows, extract_feature_map,
                     split_pos_neg, tile_layout)
from .optical import TiledOptics, optical_backward, optical_forward
from .phaseopt import OptimizationTrace, OptimizerConfig, optimize_phase, psf_loss, psf_loss_gradient
from .sensor import NoiseModel, SensorImage, capture, sample_noise
from .spectral import (CrossTalkMatrix, SpectralCurve, crosstalk_matrix, load_curve, sample_curves,
                       synth_pce)
from .suffix import SuffixNetwork, digital_baseline_forward, suffix_backward, suffix_forward
from .trainer import (ExperimentConfig, RunReport, evaluate, make_synthetic_dataset,
                      train_three_step)

__all__ = ["build_target_psf", "capture", "check_windows", "crosstalk_matrix", "CrossTalkMatrix",
           "digital_baseline_forward", "DivergenceError", "evaluate", "ExperimentConfig",
           "extract_feature_map", "InvalidInputError", "LayoutOverflowError", "load_curve",
           "make_synthetic_dataset", "mask_geometry", "MaskGeometry", "NoiseModel",
           "optical_backward", "optical_forward", "OptimizationTrace", "optimize_phase",
           "OptimizerConfig", "ParseError", "phase_to_orientation", "psf_from_phase", "psf_loss",
           "psf_loss_gradient", "RunReport", "sample_curves", "sample_noise", "SensorImage",
           "SpectralCurve", "split_pos_neg", "suffix_backward", "suffix_forward",
           "SuffixNetwork", "synth_pce", "TargetPsf", "tile_layout", "TiledOptics", "TileLayout",
           "train_three_step", "transfer_function", "WindowOverlapError"]

__version__ = "0.1.0"
