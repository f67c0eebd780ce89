import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uplinkqkd import events as evm
from uplinkqkd.receiver import AnalyzerConfig, DetectorConfig
from uplinkqkd.transmitter import BB84_STATES, SourceConfig, generate_sequence

SRC = SourceConfig()
TABLE = generate_sequence(SRC, 0)


def test_detection_probability():
    assert evm.detection_probability(0.5, 0.0) == 0.0
    assert evm.detection_probability(0.5, 1e-3) == pytest.approx(1 - np.exp(-5e-4), rel=1e-12)


def test_sparse_counts_match_expectation():
    eta = 1e-3
    slots = evm.sample_detections(TABLE, SRC, lambda t: np.full_like(t, eta), 0.0, 0.2, np.random.default_rng(0))
    n_cls = np.bincount(TABLE.intensity, minlength=3) * int(0.2 * SRC.clock_rate / 1000)
    p = 1 - np.exp(-SRC.mean_photon * eta)
    got = np.bincount(TABLE.intensity[slots % 1000], minlength=3)
    assert np.all(np.abs(got - n_cls * p) <= 5 * np.sqrt(n_cls * p) + 1e-9)
    assert got[2] == 0
    assert np.all(np.diff(slots) > 0)
    assert slots.min() >= 0 and slots.max() < 0.2 * SRC.clock_rate


@settings(max_examples=20, deadline=None)
@given(t0=st.floats(0, 1), span=st.floats(0.001, 0.05), seed=st.integers(0, 1000))
def test_slots_stay_in_window(t0, span, seed):
    slots = evm.sample_detections(TABLE, SRC, lambda t: np.full_like(t, 1e-2), t0, t0 + span,
                                  np.random.default_rng(seed))
    if len(slots):
        assert slots.min() >= t0 * SRC.clock_rate - 1
        assert slots.max() < (t0 + span) * SRC.clock_rate
        assert np.unique(slots).size == slots.size


def test_zero_transmittance_gives_nothing():
    assert len(evm.sample_detections(TABLE, SRC, lambda t: np.zeros_like(t), 0, 1, np.random.default_rng(0))) == 0


def test_chunk_shorter_than_sequence_rejected():
    with pytest.raises(ValueError):
        evm.sample_detections(TABLE, SRC, lambda t: t, 0, 1, np.random.default_rng(0), chunk=1e-7)


def test_transmittance_follows_time_profile():
    eta_fn = lambda t: np.where(t < 0.1, 2e-3, 0.0)  # noqa: E731
    slots = evm.sample_detections(TABLE, SRC, eta_fn, 0.0, 0.2, np.random.default_rng(1))
    assert np.all(slots < 0.1 * SRC.clock_rate)


def test_sparse_sampler_matches_brute_force():
    v = evm.validate_sparse_sampling(TABLE, SRC, 10 ** -3.45, seed=3, seconds=0.1, time_bins=50)
    assert v.passed, v
    assert np.all(np.abs(v.counts_sparse - v.expected) < 5 * np.sqrt(v.expected + 1))


def test_receiver_clock():
    clk = evm.ReceiverClock(offset=1e-6, drift=1e-9)
    assert clk(0.0) == pytest.approx(1e-6)
    assert clk(100.0) == pytest.approx(100.0 + 1e-6 + 1e-7)


def _simulate(eta, bg=285.0, seconds=0.2, seed=0):
    rng = np.random.default_rng(seed)
    slots = evm.sample_detections(TABLE, SRC, lambda t: np.full_like(t, eta), 0.0, seconds, rng)
    return slots, evm.simulate_receiver(slots, TABLE, SRC, lambda t: np.full_like(t, 30e-6),
                                        lambda s: BB84_STATES, AnalyzerConfig(), DetectorConfig(), bg,
                                        (0.0, seconds + 1e-4), evm.ReceiverClock(), rng)


def test_receiver_tags_reflect_flight_time_and_states():
    slots, ev = _simulate(2e-4)
    assert ev.is_signal.sum() > 0.95 * len(slots)
    sig = ev.is_signal
    t = ev.times()[sig]
    emit = np.sort(slots / SRC.clock_rate)
    # Every signal tag sits one flight time (plus clock offset) after some emission.
    j = np.clip(np.searchsorted(emit, t - 30.2e-6), 1, len(emit) - 1)
    gap = np.minimum(np.abs(t - 30.2e-6 - emit[j]), np.abs(t - 30.2e-6 - emit[j - 1]))
    assert np.percentile(gap, 99) < 3e-9


def test_link_off_channels_are_uniform():
    _, ev = _simulate(0.0, bg=2000.0, seconds=2.0)
    frac = np.bincount(ev.channel, minlength=4) / len(ev)
    assert np.allclose(frac, 0.25, atol=0.03)
    assert not ev.is_signal.any()
