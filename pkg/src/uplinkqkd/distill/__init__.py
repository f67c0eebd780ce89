"""Classical post-processing from time tags to a secure key."""

from .correlate import CorrelationFailed, CorrelationOutput, CorrelationResult, correlate, smooth_tof
from .decoy import DecoyEstimates, DecoyObservables, InsufficientStatistics, decoy_bounds
from .keyrate import binary_entropy, secure_length, single_photon_fraction
from .ldpc import ReconcileResult, choose_rate, code_for_rate, ec_reconcile
from .pipeline import DistillConfig, DistillReport, distill, pulses_per_class, write_outputs
from .privacy import privacy_amplify, toeplitz_matrix
from .sift import FrameData, SiftedKey, build_frames, default_threshold, sift, snr_filter

__all__ = [
    "CorrelationFailed", "CorrelationOutput", "CorrelationResult", "correlate", "smooth_tof",
    "DecoyEstimates", "DecoyObservables", "InsufficientStatistics", "decoy_bounds",
    "binary_entropy", "secure_length", "single_photon_fraction",
    "ReconcileResult", "choose_rate", "code_for_rate", "ec_reconcile",
    "DistillConfig", "DistillReport", "distill", "pulses_per_class", "write_outputs",
    "privacy_amplify", "toeplitz_matrix",
    "FrameData", "SiftedKey", "build_frames", "default_threshold", "sift", "snr_filter",
]
