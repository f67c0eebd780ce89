"""Binary entropy and the decoy-state secure key length."""

from __future__ import annotations

import math

import numpy as np

from .decoy import DecoyEstimates

VERIFICATION_BITS = 64
PA_SAFETY_BITS = 128


def binary_entropy(x):
    """h2(x) in bits; h2(0) = h2(1) = 0."""
    arr = np.asarray(x, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("binary entropy argument must lie in [0, 1]")
    inner = (arr > 0) & (arr < 1)
    safe = np.where(inner, arr, 0.5)
    out = np.where(inner, -safe * np.log2(safe) - (1 - safe) * np.log2(1 - safe), 0.0)
    return float(out) if out.ndim == 0 else out


def single_photon_fraction(est: DecoyEstimates, mu: float) -> float:
    """Lower bound on the fraction of signal detections caused by single photons."""
    if est.Q_mu <= 0:
        return 0.0
    return min(1.0, est.Y1_L * mu * math.exp(-mu) / est.Q_mu)


def secure_length(est: DecoyEstimates, n_sift_signal: int, leak_ec: int, mu: float,
                  t_ver: int = VERIFICATION_BITS, t_pa: int = PA_SAFETY_BITS) -> int:
    """Secure key length in bits; values <= 0 mean no key.

    Finite-size behaviour is carried by ``est``: estimates produced with a
    non-zero ``n_sigma`` already hold the adversarially shifted values.
    """
    frac = single_photon_fraction(est, mu)
    e1 = min(max(est.e1_U, 0.0), 0.5)
    ell = n_sift_signal * frac * (1.0 - binary_entropy(e1)) - leak_ec - t_ver - t_pa
    return int(math.floor(ell))
