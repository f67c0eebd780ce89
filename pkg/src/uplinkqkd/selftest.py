"""Quick oracle checks of the installed package (well under a minute)."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import kinematics as kin
from .channel import capture_fraction
from .distill.decoy import DecoyObservables, decoy_bounds
from .distill.ldpc import ec_reconcile
from .distill.privacy import privacy_amplify, toeplitz_matrix
from .events import validate_sparse_sampling
from .transmitter import (BB84_STATES, SourceConfig, generate_sequence, optimize_triplet,
                          retarder_matrix)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _satellite_rate() -> Check:
    cfg = kin.PassConfig(kind="satellite", orbit_altitude=600e3, duration=20.0, sample_interval=0.5,
                         gps_noise_sigma=0.0)
    w = kin.max_angular_speed(kin.generate_trajectory(cfg))
    return Check("600 km zenith angular rate", abs(w - 0.72) <= 0.02, f"{w:.4f} deg/s")


def _time_of_flight() -> Check:
    tof = float(kin.time_of_flight(10_000.0)) * 1e6
    return Check("time of flight at 10 km", abs(tof - 33.356) <= 0.01, f"{tof:.4f} us")


def _capture(rng) -> Check:
    worst = 0.0
    for _ in range(5):
        w = rng.uniform(0.02, 0.3)
        sigma = rng.uniform(0.0, 2e-5)
        rng_m = rng.uniform(1e3, 1e4)
        a = rng.uniform(0.02, 0.1)
        n = 400_000
        centre = rng.normal(0.0, sigma * rng_m, size=(n, 2))
        # Gaussian beam intensity exp(-2 r^2 / w^2): photon positions have per-axis sigma w/2.
        photons = centre + rng.normal(0.0, w / 2.0, size=(n, 2))
        mc = np.mean(np.hypot(*photons.T) < a)
        cf = capture_fraction(w, sigma, rng_m, a)
        worst = max(worst, abs(cf - mc) / mc)
    return Check("capture fraction vs Monte Carlo", bool(worst <= 0.02), f"max rel dev {worst:.4f}")


def _toeplitz(rng) -> Check:
    n, m = 64, 24
    ok = True
    for _ in range(200):
        seed = rng.integers(0, 2, n + m - 1, dtype=np.uint8)
        x, y = rng.integers(0, 2, (2, n), dtype=np.uint8)
        hx, hy = privacy_amplify(x, m, seed), privacy_amplify(y, m, seed)
        ok &= np.array_equal(privacy_amplify(x ^ y, m, seed), hx ^ hy)
        ok &= np.array_equal(hx, toeplitz_matrix(seed, n, m).astype(np.int64) @ x % 2)
    return Check("Toeplitz hash linearity", bool(ok), "200 random pairs")


def _decoy(rng) -> Check:
    mu, nu = 0.5, 0.1
    bad = 0
    for _ in range(100):
        eta = 10 ** rng.uniform(-5, -1)
        y0 = 10 ** rng.uniform(-7, -4)
        ed = rng.uniform(0.005, 0.05)
        yn = lambda n: 1 - (1 - y0) * (1 - eta) ** n  # noqa: E731
        en = lambda n: (0.5 * y0 + ed * (yn(n) - y0)) / yn(n)  # noqa: E731

        def gain(x):
            ns = np.arange(51)
            p = np.exp(-x + ns * math.log(x) - np.array([math.lgamma(k + 1) for k in ns]))
            y = np.array([yn(k) for k in ns])
            e = np.array([en(k) for k in ns])
            return float(np.sum(p * y)), float(np.sum(p * y * e) / np.sum(p * y))

        q_mu, e_mu = gain(mu)
        q_nu, e_nu = gain(nu)
        obs = DecoyObservables(q_mu, q_nu, e_mu, e_nu, y0, 1e12, 1e12, 1e12, 1e12, 1e12)
        est = decoy_bounds(obs, mu, nu, n_sigma=0.0)
        bad += est.Y1_L > yn(1) * (1 + 1e-9) or est.e1_U < en(1) * (1 - 1e-9)
    return Check("decoy bounds vs Poisson oracle", bad == 0, f"{bad} violations in 100")


def _polarization(rng) -> Check:
    worst = 1.0
    for _ in range(10):
        rot = retarder_matrix(rng.uniform(0, 360), rng.uniform(0, 180)) @ retarder_matrix(
            rng.uniform(0, 360), rng.uniform(0, 180))
        res = optimize_triplet((rot @ BB84_STATES.T).T)
        worst = min(worst, res.fidelity)
    return Check("waveplate compensation fidelity", worst >= 0.9999, f"min fidelity {worst:.6f}")


def _ldpc(rng) -> Check:
    n = 4096 * 16
    alice = rng.integers(0, 2, n, dtype=np.uint8)
    bob = alice ^ (rng.random(n) < 0.03).astype(np.uint8)
    res = ec_reconcile(alice, bob, 0.03, seed=1)
    ok = res.verified.mean() >= 0.9 and np.array_equal(res.corrected, res.alice)
    return Check("LDPC reconciliation at 3% QBER", bool(ok),
                 f"{res.verified.sum()}/{res.n_blocks} verified, f={res.efficiency:.3f}")


def _sparse() -> Check:
    src = SourceConfig()
    v = validate_sparse_sampling(generate_sequence(src, 1), src, 10 ** -3.45, seed=2, seconds=0.25)
    return Check("sparse slot sampling vs brute force", bool(v.passed),
                 f"z={np.round(v.z_scores, 2).tolist()} p_pos={v.p_sequence_position:.3f} p_t={v.p_time:.3f}")


def run_selftest(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []
    for fn in (_satellite_rate, _time_of_flight, lambda: _capture(rng), lambda: _toeplitz(rng),
               lambda: _decoy(rng), lambda: _polarization(rng), lambda: _ldpc(rng), _sparse):
        t0 = time.perf_counter()
        c = fn()
        c.seconds = time.perf_counter() - t0
        checks.append(c)
    return checks
