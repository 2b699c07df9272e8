"""Increment-calibrated feature caching for diffusion transformers, at desk scale."""

from .caching import CachePlan, ExecutionContext, fora_plan, run_layer, run_trajectory, single_step_error_probe
from .calibration import (
    CalibParams, CalibSet, ScalePair, ca_svd_scales, calibrate, cd_svd_scales, channel_aware_calib,
    make_calib_set, plain_svd_calib, reduced_variants,
)
from .linalg import SvdFactors, frobenius_norm, matmul, spectral_norm, thin_svd, truncate_factors
from .macs import ArchSpec, MacLedger, dit_xl2, estimate_macs
from .model import LayerId, ModelConfig, forward, init_weights
from .rng import Rng
from .samplers import (
    NoiseSchedule, SamplerRun, ddim_step, ddpm_step, forward_noising, make_linear_schedule, make_step_indices,
)

__version__ = "0.1.0"

__all__ = [
    "CachePlan", "ExecutionContext", "fora_plan", "run_layer", "run_trajectory", "single_step_error_probe",
    "CalibParams", "CalibSet", "ScalePair", "ca_svd_scales", "calibrate", "cd_svd_scales", "channel_aware_calib",
    "make_calib_set", "plain_svd_calib", "reduced_variants",
    "SvdFactors", "frobenius_norm", "matmul", "spectral_norm", "thin_svd", "truncate_factors",
    "ArchSpec", "MacLedger", "dit_xl2", "estimate_macs",
    "LayerId", "ModelConfig", "forward", "init_weights",
    "Rng",
    "NoiseSchedule", "SamplerRun", "ddim_step", "ddpm_step", "forward_noising", "make_linear_schedule",
    "make_step_indices",
]
