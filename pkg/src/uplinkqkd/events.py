"""Slot-level photon event generation for whole passes.

At 400 MHz a pass holds ~1e11 slots, almost all of which produce nothing.
Within a short chunk the link transmittance is held constant, so every
pulse of intensity class c is detected independently with the same
probability p_c = 1 - exp(-mu_c * eta).  The detected slots of that class
are then exactly a Binomial(M_c, p_c) count placed uniformly without
replacement over the class's M_c slots in the chunk.  This is identical in
distribution to drawing a Bernoulli variable for every slot, which
``brute_force_detections`` does for validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2_contingency

from .receiver import AnalyzerConfig, DetectionEvents, DetectorConfig, dark_counts, register, sample_channels
from .transmitter import PulseTable, SourceConfig

CHUNK = 0.01  # s


@dataclass(frozen=True)
class ReceiverClock:
    """Receiver time = true time + offset + drift * true time."""

    offset: float = 0.2e-6
    drift: float = 1e-10

    def __call__(self, t):
        return np.asarray(t, dtype=float) * (1.0 + self.drift) + self.offset


def _class_positions(table: PulseTable):
    return [np.flatnonzero(table.intensity == c) for c in range(3)]


def detection_probability(mu, eta):
    """Per-pulse detection probability for Poisson photon number of mean mu."""
    return -np.expm1(-np.asarray(mu) * np.asarray(eta))


def sample_detections(table: PulseTable, source: SourceConfig, eta_fn, t_start: float, t_stop: float,
                      rng: np.random.Generator, chunk: float = CHUNK) -> np.ndarray:
    """Sorted global slot indices of pulses that yield a detection.

    ``eta_fn(t)`` gives the total single-photon detection efficiency at
    source time ``t`` (vectorised).  The window is split into chunks whose
    slot count is a whole number of sequence periods.
    """
    L = len(table)
    per_chunk = int(round(chunk * source.clock_rate / L)) * L
    if per_chunk <= 0:
        raise ValueError("chunk shorter than one sequence period")
    s0 = int(np.ceil(t_start * source.clock_rate / L)) * L
    s1 = int(np.floor(t_stop * source.clock_rate / L)) * L
    if s1 <= s0:
        return np.zeros(0, dtype=np.int64)
    starts = np.arange(s0, s1, per_chunk, dtype=np.int64)
    lengths = np.minimum(per_chunk, s1 - starts)
    mids = (starts + lengths / 2.0) / source.clock_rate
    eta = np.clip(np.asarray(eta_fn(mids), dtype=float), 0.0, 1.0)
    pos = _class_positions(table)
    mu = source.mean_photon
    out = []
    for cls in range(3):
        if mu[cls] <= 0 or len(pos[cls]) == 0:
            continue
        n_cls = len(pos[cls])
        reps = lengths // L
        m = reps * n_cls
        p = detection_probability(mu[cls], eta)
        k = rng.binomial(m, p)
        for i in np.flatnonzero(k):
            idx = rng.choice(int(m[i]), int(k[i]), replace=False)
            rep, j = np.divmod(idx, n_cls)
            out.append(starts[i] + rep * L + pos[cls][j])
    if not out:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(out).astype(np.int64))


def brute_force_detections(table: PulseTable, source: SourceConfig, eta: float, n_slots: int,
                           rng: np.random.Generator, slot_start: int = 0, batch: int = 10_000_000) -> np.ndarray:
    """Reference: one Bernoulli draw per slot at constant ``eta``."""
    L = len(table)
    p_table = detection_probability(source.mean_photon[table.intensity], eta)
    out = []
    for b0 in range(0, n_slots, batch):
        b1 = min(b0 + batch, n_slots)
        s = np.arange(slot_start + b0, slot_start + b1, dtype=np.int64)
        hit = rng.random(b1 - b0) < p_table[s % L]
        out.append(s[hit])
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def simulate_receiver(slots: np.ndarray, table: PulseTable, source: SourceConfig, tof_fn, states_fn,
                      analyzer: AnalyzerConfig, detector: DetectorConfig, background_rate: float,
                      window: tuple[float, float], clock: ReceiverClock, rng: np.random.Generator,
                      ) -> DetectionEvents:
    """Time-tagged detections at the receiver for the detected slots.

    ``tof_fn(t)`` is the true one-way flight time at emission time ``t``;
    ``states_fn(second)`` returns the four emitted Stokes vectors (H, V, D, A)
    for that second.  Background counts are Poisson over ``window``
    (receiver time) at ``background_rate`` in total.
    """
    t_emit = slots.astype(np.float64) / source.clock_rate
    t_arr = clock(t_emit + tof_fn(t_emit))
    state_idx = table.state_index[slots % len(table)]
    sec = np.floor(t_emit).astype(np.int64)
    stokes = np.empty((len(slots), 3))
    if len(slots):
        bounds = np.flatnonzero(np.diff(sec)) + 1
        for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(slots)]):
            stokes[lo:hi] = states_fn(int(sec[lo]))[state_idx[lo:hi]]
    ch = sample_channels(stokes, analyzer, rng) if len(slots) else np.zeros(0, dtype=np.uint8)
    bg_cfg = DetectorConfig(detector.efficiency, (background_rate / 4.0,) * 4, detector.dead_time,
                            detector.timing_jitter_sigma, detector.tag_resolution)
    bg_t, bg_ch = dark_counts(window, bg_cfg, rng)
    t = np.concatenate([t_arr, bg_t])
    c = np.concatenate([ch, bg_ch]).astype(np.uint8)
    sig = np.concatenate([np.ones(len(t_arr), bool), np.zeros(len(bg_t), bool)])
    return register(t, c, sig, detector, rng)


@dataclass
class SamplingValidation:
    """Sparse sampler vs per-slot Bernoulli reference over one segment."""

    n_slots: int
    eta: float
    counts_sparse: np.ndarray  # per intensity class
    counts_brute: np.ndarray
    expected: np.ndarray
    z_scores: np.ndarray  # (sparse - brute) / sqrt(2 var), per class
    p_sequence_position: float  # two-sample chi-square on slot position within the sequence
    p_time: float  # two-sample chi-square on arrival time within the segment

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z_scores) < 5.0) and self.p_sequence_position > 1e-3
                    and self.p_time > 1e-3)


def _two_sample_p(a: np.ndarray, b: np.ndarray) -> float:
    keep = (a + b) > 0
    return float(chi2_contingency(np.vstack([a[keep], b[keep]]))[1])


def validate_sparse_sampling(table: PulseTable, source: SourceConfig, eta: float, seed: int = 0,
                             seconds: float = 1.0, time_bins: int = 100) -> SamplingValidation:
    """Compare sparse sampling with a full-rate brute-force segment at constant ``eta``."""
    n_slots = int(round(seconds * source.clock_rate / len(table))) * len(table)
    rng = np.random.default_rng([seed, 1])
    brute = brute_force_detections(table, source, eta, n_slots, rng)
    rng = np.random.default_rng([seed, 2])
    sparse = sample_detections(table, source, lambda t: np.full_like(t, eta), 0.0,
                               n_slots / source.clock_rate, rng)
    L = len(table)
    cls_b = np.bincount(table.intensity[brute % L], minlength=3)
    cls_s = np.bincount(table.intensity[sparse % L], minlength=3)
    n_cls = np.bincount(table.intensity, minlength=3) * (n_slots // L)
    p = detection_probability(source.mean_photon, eta)
    expected = n_cls * p
    var = n_cls * p * (1 - p)
    z = np.where(var > 0, (cls_s - cls_b) / np.sqrt(2 * np.maximum(var, 1e-300)), 0.0)
    pos_p = _two_sample_p(np.bincount(sparse % L, minlength=L), np.bincount(brute % L, minlength=L))
    edges = np.linspace(0, n_slots, time_bins + 1)
    time_p = _two_sample_p(np.histogram(sparse, edges)[0], np.histogram(brute, edges)[0])
    return SamplingValidation(n_slots, eta, cls_s, cls_b, expected, z, pos_p, time_p)
