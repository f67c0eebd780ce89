import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from oracles import jones_retarder, jones_to_stokes, stokes_to_jones
from uplinkqkd import transmitter as tx
from uplinkqkd.transmitter import BB84_STATES, FiberDrift, SourceConfig, WaveplateTriplet


def test_sequence_is_deterministic_in_seed():
    a = tx.generate_sequence(SourceConfig(), 7)
    b = tx.generate_sequence(SourceConfig(), 7)
    c = tx.generate_sequence(SourceConfig(), 8)
    assert all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("intensity", "basis", "bit"))
    assert not np.array_equal(a.intensity, c.intensity)


@pytest.mark.parametrize("random_per_slot", [False, True])
@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_sequence_composition(seed, random_per_slot):
    t = tx.generate_sequence(SourceConfig(random_per_slot=random_per_slot), seed)
    assert len(t) == 1000
    frac = np.bincount(t.intensity, minlength=3) / 1000
    assert np.all(np.abs(frac - [0.80, 0.14, 0.06]) <= 0.03)
    assert abs(t.basis.mean() - 0.5) <= 0.05


def test_pulse_slot_wraps_sequence():
    t = tx.generate_sequence(SourceConfig(), 3)
    p = tx.pulse_slot(t, 123_456_789)
    k = 123_456_789 % 1000
    assert int(p.intensity) == t.intensity[k]
    assert np.array_equal(p.polarization, BB84_STATES[2 * t.basis[k] + t.bit[k]])


def test_source_config_validation():
    with pytest.raises(ValueError):
        SourceConfig(p_signal=0.9)
    with pytest.raises(ValueError):
        SourceConfig(mu=0.1, nu=0.2)


def test_source_log_round_trip(tmp_path):
    cfg = SourceConfig()
    t = tx.generate_sequence(cfg, 11)
    tx.write_source_log(tmp_path / "s.bin", tmp_path / "s.json", t, cfg, 11, 5)
    back, epochs = tx.read_source_log(tmp_path / "s.bin")
    assert np.array_equal(back.intensity, t.intensity)
    assert np.array_equal(back.state_index, t.state_index)
    assert list(epochs["slot"]) == [0, 400_000_000, 800_000_000, 1_200_000_000, 1_600_000_000]
    with pytest.raises(ValueError):
        (tmp_path / "bad.bin").write_bytes(b"nope" * 4)
        tx.read_source_log(tmp_path / "bad.bin")


def test_waveplate_identities():
    assert np.allclose(tx.apply_waveplate(tx.H, 180.0, 22.5), tx.D)
    assert np.allclose(tx.apply_waveplate(tx.H, 90.0, 45.0), tx.R)
    assert np.allclose(WaveplateTriplet(0, 0, 0).matrix(), np.eye(3))  # 360 degrees about one axis
    assert np.allclose(tx.apply_waveplate(tx.D, 180.0, 0.0), tx.A)
    assert WaveplateTriplet(190.0, -10.0, 360.0).alpha == pytest.approx(10.0)


@settings(max_examples=100)
@given(ret=st.floats(0, 360), ang=st.floats(-180, 360), th=st.floats(0, math.pi), ph=st.floats(0, 2 * math.pi))
def test_retarder_matches_jones_and_preserves_norm(ret, ang, th, ph):
    s = np.array([math.cos(th), math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph)])
    m = tx.retarder_matrix(ret, ang)
    out = m @ s
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)
    ref = jones_to_stokes(jones_retarder(ret, ang) @ stokes_to_jones(s))
    assert np.allclose(out, ref, atol=1e-9)


def test_drift_identity_at_calibration_and_frozen_limit():
    d = FiberDrift(seed=3)
    assert np.allclose(d.matrix(0.0), np.eye(3))
    frozen = FiberDrift(seed=3, correlation_time=math.inf)
    assert np.allclose(frozen.matrix(0.0), frozen.matrix(1e6))
    assert not np.allclose(d.matrix(300.0), np.eye(3))
    assert np.allclose(tx.fiber_unitary_drift(120.0, 3), d.matrix(120.0))


@settings(max_examples=50)
@given(seed=st.integers(0, 10_000), t=st.floats(0, 5000))
def test_drift_is_bloch_isometry(seed, t):
    m = FiberDrift(seed=seed).matrix(t)
    g0 = BB84_STATES @ BB84_STATES.T
    rot = (m @ BB84_STATES.T).T
    assert np.allclose(rot @ rot.T, g0, atol=1e-12)
    assert np.linalg.det(m) == pytest.approx(1.0)


def test_tomography_examples():
    assert np.allclose(tx.tomography([100, 0, 50, 50, 50, 50]), [1, 0, 0])
    assert np.allclose(tx.tomography([10] * 6), [0, 0, 0])
    with pytest.raises(tx.TomographyError):
        tx.tomography([0, 0, 1, 1, 1, 1])
    with pytest.raises(tx.TomographyError):
        tx.tomography([-1, 2, 1, 1, 1, 1])


@pytest.mark.parametrize("seed", range(5))
def test_tomography_poisson_accuracy(seed):
    rng = np.random.default_rng(seed)
    s = Rotation.random(random_state=seed).apply([1.0, 0.0, 0.0])
    counts = rng.poisson(tx.expected_tomography_counts(s[None], 1e5))
    assert np.linalg.norm(tx.tomography(counts)[0] - s) < 0.02


@pytest.mark.parametrize("n", [1e3, 1e5])
def test_tomography_error_scales_as_inverse_sqrt_n(n):
    rng = np.random.default_rng(4)
    states = Rotation.random(200, random_state=5).apply([1.0, 0.0, 0.0])
    rec = tx.tomography(rng.poisson(tx.expected_tomography_counts(states, n)))
    rms = np.sqrt(np.mean(np.sum((rec - states) ** 2, axis=1)))
    # Per component var = (1 - s_i^2) / n; summed over components 2/n for a pure state.
    assert rms == pytest.approx(math.sqrt(2 / n), rel=0.15)


def test_identity_drift_gives_identity_equivalent_triplet():
    res = tx.optimize_triplet(BB84_STATES)
    assert res.fidelity == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(res.triplet.matrix() @ BB84_STATES.T, BB84_STATES.T, atol=1e-6)
    assert res.converged


def test_random_rotations_fully_compensated():
    rots = Rotation.random(1000, random_state=12).as_matrix()
    worst = 1.0
    for m in rots:
        res = tx.optimize_triplet((m @ BB84_STATES.T).T)
        worst = min(worst, res.fidelity)
    assert worst >= 0.9999


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), purity=st.floats(0.3, 1.0))
def test_optimizer_never_worse_than_identity(seed, purity):
    m = Rotation.random(random_state=seed).as_matrix()
    recon = purity * (m @ BB84_STATES.T).T
    res = tx.optimize_triplet(recon)
    identity = tx.mean_fidelity(recon, BB84_STATES)
    assert res.fidelity >= identity - 1e-12


def test_depolarized_drift_fidelity_and_qber():
    m = Rotation.random(random_state=3).as_matrix()
    recon = 0.98 * (m @ BB84_STATES.T).T
    res = tx.optimize_triplet(recon)
    assert res.fidelity == pytest.approx(0.99, abs=1e-4)
    comp = (res.triplet.matrix() @ recon.T).T
    assert tx.predicted_source_qber(comp) == pytest.approx(1 - res.fidelity, abs=1e-12)


def test_predicted_qber_examples():
    assert tx.predicted_source_qber(BB84_STATES) == pytest.approx(0.0)
    assert tx.predicted_source_qber(0.94 * BB84_STATES) == pytest.approx(0.03, abs=1e-12)


def test_compensator_tracks_configured_error_floor():
    comp = tx.PolarizationCompensator(FiberDrift(seed=2), intrinsic_qber=0.03, seed=1)
    q = [comp.update(float(t)).predicted_qber for t in range(0, 60, 5)]
    assert np.allclose(q, 0.03, atol=0.003)
    emitted = comp.emitted_states(55.0)
    assert tx.predicted_source_qber(emitted) == pytest.approx(0.03, abs=0.003)


def test_default_drift_source_qber_in_realistic_band():
    comp = tx.PolarizationCompensator(FiberDrift(seed=9), intrinsic_qber=SourceConfig().intrinsic_qber, seed=9)
    q = []
    for t in range(300):
        comp.update(float(t))
        q.append(tx.predicted_source_qber(comp.emitted_states(t + 0.5)))
    assert 0.0266 <= np.mean(q) <= 0.0508
