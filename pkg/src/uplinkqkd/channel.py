"""Optical uplink budget: turbulence, beam spread, pointing jitter, absorption."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .kinematics import TrajectorySample

# Long-term beam spread coefficient; replaceable.
TURBULENCE_SPREAD_COEFF = 2.1
HV_UPPER_COEFF = 0.00594
HV_MID_COEFF = 2.7e-16

LINK_CSV_HEADER = ("t", "loss_db", "background_hz", "eta")


@dataclass(frozen=True)
class LinkBudgetParams:
    wavelength: float = 785e-9
    tx_aperture_diameter: float = 0.12
    rx_aperture_diameter: float = 0.10
    beam_divergence_half_angle: float | None = None  # None: 1.22 lambda / D_tx
    rx_optics_transmittance: float = 0.597
    detector_efficiency: float = 0.43
    cn2_ground: float = 1.7e-14
    wind_speed: float = 21.0
    visibility: float = 5000.0
    ground_altitude: float = 128.0
    pointing_sigma: float = math.radians(0.00133)  # rad, per axis
    dark_rate_total: float = 285.0
    stray_rate: float = 0.0
    atmosphere_ceiling: float | None = None  # m; None uses the full slant range
    quadrature_panels: int = 2000

    def __post_init__(self):
        for name in ("rx_optics_transmittance", "detector_efficiency"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        for name in ("wavelength", "tx_aperture_diameter", "rx_aperture_diameter", "visibility"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.pointing_sigma < 0 or self.cn2_ground < 0:
            raise ValueError("pointing_sigma and cn2_ground must be non-negative")
        if self.dark_rate_total < 0 or self.stray_rate < 0:
            raise ValueError("background rates must be non-negative")

    @property
    def divergence(self) -> float:
        if self.beam_divergence_half_angle is not None:
            return self.beam_divergence_half_angle
        return 1.22 * self.wavelength / self.tx_aperture_diameter

    @property
    def background_rate(self) -> float:
        return self.dark_rate_total + self.stray_rate


@dataclass(frozen=True)
class LinkSample:
    t: float
    loss_db: float
    background_rate: float

    @property
    def signal_detection_prob(self) -> float:
        return 10.0 ** (-self.loss_db / 10.0)


def hv_cn2_profile(h, params: LinkBudgetParams = LinkBudgetParams()):
    """Hufnagel-Valley C_n^2 at altitude ``h`` (m ASL), vectorised."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("altitude must be non-negative")
    v = params.wind_speed
    out = (HV_UPPER_COEFF * (v / 27.0) ** 2 * (1e-5 * h) ** 10 * np.exp(-h / 1000.0)
           + HV_MID_COEFF * np.exp(-h / 1500.0)
           + params.cn2_ground * np.exp(-h / 100.0))
    return float(out) if out.ndim == 0 else out


def _simpson(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, panels: int) -> float:
    if panels % 2:
        panels += 1
    x = np.linspace(a, b, panels + 1)
    y = f(x)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((b - a) / (3.0 * panels) * np.dot(w, y))


def integrated_cn2(h_low: float, h_high: float, params: LinkBudgetParams,
                   profile: Callable | None = None) -> float:
    """Vertical integral of C_n^2 between two altitudes (composite Simpson)."""
    prof = profile if profile is not None else (lambda h: hv_cn2_profile(h, params))
    lo, hi = sorted((h_low, h_high))
    if hi == lo:
        return 0.0
    return _simpson(prof, lo, hi, params.quadrature_panels)


def fried_parameter(elevation_deg: float, platform_altitude: float,
                    params: LinkBudgetParams = LinkBudgetParams(),
                    profile: Callable | None = None) -> float:
    """Fried parameter r0 (m) along a slant path; ``math.inf`` without turbulence."""
    if elevation_deg <= 0:
        raise ValueError("elevation must be positive")
    zenith = math.radians(90.0 - elevation_deg)
    integral = integrated_cn2(params.ground_altitude, platform_altitude, params, profile)
    if integral <= 0:
        return math.inf
    k = 2.0 * math.pi / params.wavelength
    return (0.423 * k**2 / math.cos(zenith) * integral) ** (-3.0 / 5.0)


def longterm_spot_radius(range_m: float, params: LinkBudgetParams = LinkBudgetParams(),
                         r0: float | None = None) -> float:
    """Long-term 1/e^2 beam radius at the receiver."""
    if range_m < 0:
        raise ValueError("range must be non-negative")
    w2 = (params.divergence * range_m) ** 2
    if r0 is not None and math.isfinite(r0):
        w2 += (TURBULENCE_SPREAD_COEFF * params.wavelength * range_m / (math.pi * r0)) ** 2
    return math.sqrt(w2)


def capture_fraction(w_lt, pointing_sigma, range_m, rx_radius):
    """Mean fraction of a jittered Gaussian beam inside a circular aperture.

    ``pointing_sigma`` is the per-axis angular jitter (rad); the beam centre
    wanders with per-axis sigma ``pointing_sigma * range_m``.
    """
    sigma_j = np.asarray(pointing_sigma, dtype=float) * np.asarray(range_m, dtype=float)
    w_eff2 = np.asarray(w_lt, dtype=float) ** 2 + 4.0 * sigma_j**2
    with np.errstate(divide="ignore"):
        out = np.where(w_eff2 > 0, -np.expm1(-2.0 * np.asarray(rx_radius, dtype=float) ** 2
                                            / np.where(w_eff2 > 0, w_eff2, 1.0)), 1.0)
    return float(out) if out.ndim == 0 else out


def extinction_coefficient(params: LinkBudgetParams) -> float:
    """Kruse aerosol extinction (1/m) from visibility."""
    if math.isinf(params.visibility):
        return 0.0
    v_km = params.visibility / 1000.0
    q = 0.585 * v_km ** (1.0 / 3.0)
    return 3.912 / params.visibility * (params.wavelength / 550e-9) ** (-q)


def atmospheric_transmittance(range_m: float, elevation_deg: float,
                              params: LinkBudgetParams = LinkBudgetParams()) -> float:
    if range_m < 0:
        raise ValueError("range must be non-negative")
    path = range_m
    if params.atmosphere_ceiling is not None and elevation_deg > 0:
        path = min(range_m, params.atmosphere_ceiling / math.sin(math.radians(elevation_deg)))
    return math.exp(-extinction_coefficient(params) * path)


def link_efficiency(sample: TrajectorySample, params: LinkBudgetParams) -> float:
    """Per-photon transmittance from telescope exit to detector click."""
    platform_alt = sample.position.altitude
    r0 = fried_parameter(max(sample.elevation, 1e-6), max(platform_alt, params.ground_altitude), params)
    w = longterm_spot_radius(sample.range, params, r0)
    cap = capture_fraction(w, params.pointing_sigma, sample.range, params.rx_aperture_diameter / 2.0)
    atm = atmospheric_transmittance(sample.range, sample.elevation, params)
    return cap * atm * params.rx_optics_transmittance * params.detector_efficiency


def total_loss(sample: TrajectorySample, params: LinkBudgetParams = LinkBudgetParams()) -> LinkSample:
    eta = link_efficiency(sample, params)
    return LinkSample(sample.t, -10.0 * math.log10(eta), params.background_rate)


def link_series(samples: Sequence[TrajectorySample], params: LinkBudgetParams,
                pointing_sigma: Sequence[float] | None = None) -> list[LinkSample]:
    """Loss per trajectory sample, optionally with a per-sample pointing jitter (rad)."""
    out = []
    for i, s in enumerate(samples):
        p = params if pointing_sigma is None else replace(params, pointing_sigma=float(pointing_sigma[i]))
        out.append(total_loss(s, p))
    return out


def scintillate(loss_db: np.ndarray, sigma_db: float, rng: np.random.Generator) -> np.ndarray:
    """Per-second log-normal fading: Gaussian jitter on the loss in dB."""
    loss_db = np.asarray(loss_db, dtype=float)
    if sigma_db <= 0:
        return loss_db.copy()
    return np.maximum(loss_db + rng.normal(0.0, sigma_db, size=loss_db.shape), 0.0)


def write_link_csv(path, link: Sequence[LinkSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LINK_CSV_HEADER)
        for s in link:
            w.writerow([f"{s.t:.6f}", f"{s.loss_db:.6f}", f"{s.background_rate:.3f}",
                        f"{s.signal_detection_prob:.9e}"])
