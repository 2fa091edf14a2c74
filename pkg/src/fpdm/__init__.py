"""Weakly supervised anomaly segmentation from the forward process of a guided diffusion model.

The pipeline sweeps an input along the noising trajectory, compares
healthy-guided and unguided one-step predictions of the clean image, and uses
their divergence to pick the guidance strength, the aggregation end step and
the per-input threshold. Backends are either a trained conditional denoiser
or an exact Gaussian-mixture score oracle built from synthetic phantoms.
"""
from .forward import Drift, Encoding, ForwardTrace, NumericFailure, Storage, sweep, sweep_multi
from .schedule import ConfigurationError, DiffusionSchedule, make_linear_schedule
from .score import Condition, GaussianMixtureOracle, OracleBackend
from .segmentation import SamMode, SegmentOptions, SegmentationResult, segment, segment_batch
from .selection import SelectionCalibration, select_end_step, select_guidance, select_quantile

__version__ = "0.1.0"

__all__ = [
    "Condition", "ConfigurationError", "DiffusionSchedule", "Drift", "Encoding", "ForwardTrace",
    "GaussianMixtureOracle", "NumericFailure", "OracleBackend", "SamMode", "SegmentOptions",
    "SegmentationResult", "SelectionCalibration", "Storage", "make_linear_schedule", "segment",
    "segment_batch", "select_end_step", "select_guidance", "select_quantile", "sweep", "sweep_multi",
]
