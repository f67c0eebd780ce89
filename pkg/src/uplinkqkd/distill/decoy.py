"""Vacuum + weak decoy bounds on single-photon yield and error rate."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

E0 = 0.5  # error rate of vacuum (background) detections


class InsufficientStatistics(ValueError):
    """The single-photon yield bound is not positive: no key can be extracted."""


@dataclass(frozen=True)
class DecoyObservables:
    """Measured gains and error rates with the sample sizes behind them.

    ``N_*`` are emitted pulse counts per class; ``n_err_*`` are the numbers of
    sifted bits the error rates were estimated on.
    """

    Q_mu: float
    Q_nu: float
    E_mu: float
    E_nu: float
    Y0: float
    N_mu: float
    N_nu: float
    N_vac: float
    n_err_mu: float
    n_err_nu: float


@dataclass(frozen=True)
class DecoyEstimates:
    Q_mu: float
    Q_nu: float
    E_mu: float
    E_nu: float
    Y0: float
    Y1_L: float
    e1_U: float
    n_sigma: float

    def as_dict(self) -> dict:
        return asdict(self)


def _sigma(p: float, n: float) -> float:
    if n <= 0:
        return 0.0
    p = min(max(p, 0.0), 1.0)
    return math.sqrt(p * (1.0 - p) / n)


def _clip01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def y1_lower(Q_mu: float, Q_nu: float, Y0: float, mu: float, nu: float) -> float:
    return (mu / (mu * nu - nu * nu)) * (
        Q_nu * math.exp(nu) - Q_mu * math.exp(mu) * nu * nu / (mu * mu)
        - (mu * mu - nu * nu) / (mu * mu) * Y0)


def e1_upper(E_nu: float, Q_nu: float, Y0: float, Y1_L: float, nu: float) -> float:
    return (E_nu * Q_nu * math.exp(nu) - E0 * Y0) / (Y1_L * nu)


def decoy_bounds(obs: DecoyObservables, mu: float, nu: float, n_sigma: float = 10.0) -> DecoyEstimates:
    """Y1 lower bound and e1 upper bound with every observable shifted by ``n_sigma``.

    Each appearance of an observable is moved in whichever direction weakens
    the bound; the reported Q/E/Y0 fields are the shifts used for Y1_L (for
    E, the upward shift).
    """
    if not 0.0 < nu < mu:
        raise ValueError("require 0 < nu < mu")
    if min(obs.N_mu, obs.N_nu) <= 0:
        raise ValueError("pulse counts must be positive for signal and decoy")
    k = n_sigma
    q_mu_hi = _clip01(obs.Q_mu + k * _sigma(obs.Q_mu, obs.N_mu))
    q_nu_lo = _clip01(obs.Q_nu - k * _sigma(obs.Q_nu, obs.N_nu))
    q_nu_hi = _clip01(obs.Q_nu + k * _sigma(obs.Q_nu, obs.N_nu))
    y0_hi = _clip01(obs.Y0 + k * _sigma(obs.Y0, obs.N_vac))
    y0_lo = _clip01(obs.Y0 - k * _sigma(obs.Y0, obs.N_vac))
    e_nu_hi = _clip01(obs.E_nu + k * _sigma(obs.E_nu, obs.n_err_nu))
    e_mu_hi = _clip01(obs.E_mu + k * _sigma(obs.E_mu, obs.n_err_mu))

    y1 = y1_lower(q_mu_hi, q_nu_lo, y0_hi, mu, nu)
    if y1 <= 0:
        raise InsufficientStatistics(f"Y1 lower bound {y1:.3e} is not positive")
    y1 = min(y1, 1.0)
    e1 = e1_upper(e_nu_hi, q_nu_hi, y0_lo, y1, nu)
    e1 = min(max(e1, 0.0), 0.5)
    return DecoyEstimates(q_mu_hi, q_nu_lo, e_mu_hi, e_nu_hi, y0_hi, y1, e1, n_sigma)
