"""Decoy-state BB84 source and the fibre polarization compensation loop.

Polarization states are normalized Stokes (Bloch) 3-vectors: H=(1,0,0),
V=(-1,0,0), D=(0,1,0), A=(0,-1,0), R=(0,0,1), L=(0,0,-1).  Retarders use the
standard Mueller convention, under which a quarter-wave plate with its fast
axis at 45 degrees takes H to s3=+1 (R).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import IntEnum

import numpy as np
from scipy.spatial.transform import Rotation

SIGNAL, DECOY, VACUUM = 0, 1, 2
BASIS_HV, BASIS_DA = 0, 1

H = np.array([1.0, 0.0, 0.0])
V = -H
D = np.array([0.0, 1.0, 0.0])
A = -D
R = np.array([0.0, 0.0, 1.0])
L = -R
# Indexed by 2*basis + bit: H, V, D, A.
BB84_STATES = np.array([H, V, D, A])
# Tomography projector axes, in the order H, V, D, A, R, L.
PROJECTORS = np.array([H, V, D, A, R, L])


class Intensity(IntEnum):
    SIGNAL = SIGNAL
    DECOY = DECOY
    VACUUM = VACUUM


@dataclass(frozen=True)
class SourceConfig:
    clock_rate: float = 4e8
    mu: float = 0.5
    nu: float = 0.1
    p_signal: float = 0.80
    p_decoy: float = 0.14
    p_vacuum: float = 0.06
    sequence_length: int = 1000
    intrinsic_qber: float = 0.031
    random_per_slot: bool = False

    def __post_init__(self):
        if abs(self.p_signal + self.p_decoy + self.p_vacuum - 1.0) > 1e-9:
            raise ValueError("intensity probabilities must sum to 1")
        if min(self.p_signal, self.p_decoy, self.p_vacuum) < 0:
            raise ValueError("intensity probabilities must be non-negative")
        if not 0.0 < self.nu < self.mu:
            raise ValueError("require 0 < nu < mu")
        if self.clock_rate <= 0 or self.sequence_length <= 0:
            raise ValueError("clock_rate and sequence_length must be positive")
        if not 0.0 <= self.intrinsic_qber < 0.5:
            raise ValueError("intrinsic_qber must be in [0, 0.5)")

    @property
    def mean_photon(self) -> np.ndarray:
        """Mean photon number indexed by intensity class."""
        return np.array([self.mu, self.nu, 0.0])

    @property
    def class_probabilities(self) -> np.ndarray:
        return np.array([self.p_signal, self.p_decoy, self.p_vacuum])

    @property
    def slot_period(self) -> float:
        return 1.0 / self.clock_rate

    @property
    def sequence_period(self) -> float:
        return self.sequence_length / self.clock_rate


@dataclass(frozen=True)
class PulseTable:
    """The repeating slot table: per-slot intensity class, basis and bit."""

    intensity: np.ndarray
    basis: np.ndarray
    bit: np.ndarray

    def __len__(self):
        return len(self.intensity)

    @property
    def state_index(self) -> np.ndarray:
        return 2 * self.basis + self.bit

    def polarization(self, slot) -> np.ndarray:
        return BB84_STATES[self.state_index[np.asarray(slot) % len(self)]]


@dataclass(frozen=True)
class PulseSlot:
    slot_index: int
    intensity: Intensity
    basis: int
    bit: int
    polarization: np.ndarray


def _exact_counts(n: int, probs: np.ndarray) -> np.ndarray:
    raw = probs * n
    counts = np.floor(raw).astype(int)
    # Largest-remainder rounding so the counts sum to n.
    for i in np.argsort(-(raw - counts))[: n - counts.sum()]:
        counts[i] += 1
    return counts


def generate_sequence(config: SourceConfig, seed: int) -> PulseTable:
    """Pseudorandom slot table, deterministic in ``seed``.

    The default table has exactly the configured intensity composition and
    exactly balanced basis/bit choices, shuffled.  With ``random_per_slot``
    every slot is drawn independently instead.
    """
    rng = np.random.default_rng(seed)
    n = config.sequence_length
    if config.random_per_slot:
        intensity = rng.choice(3, size=n, p=config.class_probabilities)
        basis = rng.integers(0, 2, size=n)
        bit = rng.integers(0, 2, size=n)
    else:
        counts = _exact_counts(n, config.class_probabilities)
        intensity = rng.permutation(np.repeat(np.arange(3), counts))
        states = rng.permutation(np.arange(n) % 4)
        basis, bit = states // 2, states % 2
    return PulseTable(intensity.astype(np.uint8), basis.astype(np.uint8), bit.astype(np.uint8))


def pulse_slot(table: PulseTable, slot_index: int) -> PulseSlot:
    k = slot_index % len(table)
    return PulseSlot(slot_index, Intensity(int(table.intensity[k])), int(table.basis[k]),
                     int(table.bit[k]), BB84_STATES[2 * table.basis[k] + table.bit[k]].copy())


def write_source_log(path, sidecar_path, table: PulseTable, config: SourceConfig, seed: int,
                     n_seconds: int) -> None:
    """Binary slot table plus per-second epoch markers, and a JSON sidecar.

    Layout (little-endian): magic ``b"SRCLOG01"``, uint32 table length,
    table records {uint16 slot, uint8 intensity, uint8 basis, uint8 bit},
    uint32 epoch count, epoch records {uint32 second, uint64 first_slot}.
    """
    rec = np.zeros(len(table), dtype=SOURCE_RECORD_DTYPE)
    rec["slot"] = np.arange(len(table))
    rec["intensity"], rec["basis"], rec["bit"] = table.intensity, table.basis, table.bit
    epochs = np.zeros(n_seconds, dtype=EPOCH_RECORD_DTYPE)
    epochs["second"] = np.arange(n_seconds)
    epochs["slot"] = np.round(np.arange(n_seconds) * config.clock_rate).astype(np.uint64)
    with open(path, "wb") as fh:
        fh.write(b"SRCLOG01")
        fh.write(np.uint32(len(table)).tobytes())
        fh.write(rec.tobytes())
        fh.write(np.uint32(n_seconds).tobytes())
        fh.write(epochs.tobytes())
    with open(sidecar_path, "w") as fh:
        json.dump({"seed": seed, **asdict(config)}, fh, indent=2, sort_keys=True)


SOURCE_RECORD_DTYPE = np.dtype([("slot", "<u2"), ("intensity", "u1"), ("basis", "u1"), ("bit", "u1")])
EPOCH_RECORD_DTYPE = np.dtype([("second", "<u4"), ("slot", "<u8")])


def read_source_log(path) -> tuple[PulseTable, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(8) != b"SRCLOG01":
            raise ValueError("not a source log")
        n = int(np.frombuffer(fh.read(4), "<u4")[0])
        rec = np.frombuffer(fh.read(n * SOURCE_RECORD_DTYPE.itemsize), SOURCE_RECORD_DTYPE)
        m = int(np.frombuffer(fh.read(4), "<u4")[0])
        epochs = np.frombuffer(fh.read(m * EPOCH_RECORD_DTYPE.itemsize), EPOCH_RECORD_DTYPE)
    order = np.argsort(rec["slot"])
    table = PulseTable(rec["intensity"][order].copy(), rec["basis"][order].copy(), rec["bit"][order].copy())
    return table, epochs.copy()


# --- polarization optics ---------------------------------------------------

def retarder_matrix(retardance_deg: float, angle_deg: float) -> np.ndarray:
    """3x3 Stokes-space Mueller block of a linear retarder (fast axis at ``angle_deg``)."""
    d = math.radians(retardance_deg)
    c, s = math.cos(2 * math.radians(angle_deg)), math.sin(2 * math.radians(angle_deg))
    cd, sd = math.cos(d), math.sin(d)
    return np.array([
        [c * c + s * s * cd, c * s * (1 - cd), -s * sd],
        [c * s * (1 - cd), s * s + c * c * cd, c * sd],
        [s * sd, -c * sd, cd],
    ])


def apply_waveplate(state, retardance_deg: float, angle_deg: float) -> np.ndarray:
    return retarder_matrix(retardance_deg, angle_deg) @ np.asarray(state, dtype=float)


@dataclass(frozen=True)
class WaveplateTriplet:
    """Quarter-, half-, quarter-wave plate angles in degrees (mod 180)."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            object.__setattr__(self, name, float(getattr(self, name)) % 180.0)

    def matrix(self) -> np.ndarray:
        # Light meets the plates in order alpha, beta, gamma.
        return (retarder_matrix(90.0, self.gamma) @ retarder_matrix(180.0, self.beta)
                @ retarder_matrix(90.0, self.alpha))


def _retarder_stack(retardance_deg: float, angles_deg: np.ndarray) -> np.ndarray:
    d = math.radians(retardance_deg)
    th = 2 * np.radians(angles_deg)
    c, s = np.cos(th), np.sin(th)
    cd, sd = math.cos(d), math.sin(d)
    out = np.empty(angles_deg.shape + (3, 3))
    out[..., 0, 0] = c * c + s * s * cd
    out[..., 0, 1] = out[..., 1, 0] = c * s * (1 - cd)
    out[..., 0, 2] = -s * sd
    out[..., 1, 1] = s * s + c * c * cd
    out[..., 1, 2] = c * sd
    out[..., 2, 0] = s * sd
    out[..., 2, 1] = -c * sd
    out[..., 2, 2] = cd
    return out


def _triplet_stack(angles: np.ndarray) -> np.ndarray:
    """Triplet matrices for an (N, 3) array of angles."""
    q1 = _retarder_stack(90.0, angles[:, 0])
    hw = _retarder_stack(180.0, angles[:, 1])
    q2 = _retarder_stack(90.0, angles[:, 2])
    return q2 @ hw @ q1


def mean_fidelity(compensated: np.ndarray, targets: np.ndarray) -> float:
    """Mean Bloch-vector fidelity (1 + r.t)/2 over paired rows."""
    return float(np.mean(0.5 * (1.0 + np.sum(compensated * targets, axis=-1))))


# --- fibre drift -----------------------------------------------------------

@dataclass(frozen=True)
class FiberDrift:
    """Slowly varying fibre rotation, identity at t=0 (the calibration epoch).

    The rotation vector is a sum of random-phase sinusoids with periods of a
    few correlation times, so it is bounded and smooth; an infinite
    correlation time freezes it at the identity.
    """

    seed: int = 0
    correlation_time: float = 300.0
    amplitude: float = 0.4  # rad, per rotation-vector component
    n_modes: int = 4

    def _modes(self):
        rng = np.random.default_rng(self.seed)
        coef = rng.normal(0.0, 1.0, size=(self.n_modes, 3)) / math.sqrt(self.n_modes)
        scale = rng.uniform(0.5, 2.0, size=self.n_modes)
        phase = rng.uniform(0.0, 2 * math.pi, size=self.n_modes)
        return coef, scale, phase

    def rotvec(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if math.isinf(self.correlation_time):
            return np.zeros((len(t), 3))
        coef, scale, phase = self._modes()
        arg = 2 * math.pi * t[:, None] / (self.correlation_time * scale[None, :]) + phase[None, :]
        w = np.sin(arg) - np.sin(phase)[None, :]
        return self.amplitude * (w @ coef)

    def matrix(self, t: float) -> np.ndarray:
        return Rotation.from_rotvec(self.rotvec(t)[0]).as_matrix()


def fiber_unitary_drift(t: float, seed: int, correlation_time: float = 300.0) -> np.ndarray:
    """Stokes-space rotation applied by the fibre at time ``t``."""
    return FiberDrift(seed=seed, correlation_time=correlation_time).matrix(t)


# --- tomography and compensation ------------------------------------------

class TomographyError(ValueError):
    pass


def tomography(counts) -> np.ndarray:
    """Stokes vectors from projector counts.

    ``counts`` has shape (..., 6) in projector order H, V, D, A, R, L.
    """
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise TomographyError("negative counts")
    pairs = c.reshape(c.shape[:-1] + (3, 2))
    tot = pairs.sum(axis=-1)
    if np.any(tot <= 0):
        raise TomographyError("zero total counts in a measurement basis")
    s = (pairs[..., 0] - pairs[..., 1]) / tot
    norm = np.linalg.norm(s, axis=-1, keepdims=True)
    return np.where(norm > 1.0, s / np.where(norm > 0, norm, 1.0), s)


def expected_tomography_counts(states: np.ndarray, counts_per_projector: float) -> np.ndarray:
    """Mean counts per projector for Stokes vectors ``states`` (N, 3)."""
    return counts_per_projector * 0.5 * (1.0 + np.asarray(states) @ PROJECTORS.T)


@dataclass(frozen=True)
class TripletResult:
    triplet: WaveplateTriplet
    fidelity: float
    converged: bool
    evaluations: int


def _objective(matrices: np.ndarray, recon: np.ndarray, targets: np.ndarray) -> np.ndarray:
    # matrices (N,3,3); mean over states of (1 + t . M r)/2
    comp = np.einsum("nij,kj->nki", matrices, recon)
    return 0.5 * (1.0 + np.mean(np.sum(comp * targets[None], axis=-1), axis=-1))


def optimize_triplet(reconstructed, targets=BB84_STATES, initial: WaveplateTriplet | None = None,
                     grid_step: float = 10.0, tol: float = 0.01) -> TripletResult:
    """Waveplate angles maximizing the mean fidelity of compensated states.

    A 3-D grid search (skipped when ``initial`` is given) seeds a pattern
    search that halves its step down to ``tol`` degrees.
    """
    recon = np.asarray(reconstructed, dtype=float)
    targets = np.asarray(targets, dtype=float)
    evals = 0
    identity = float(_objective(np.eye(3)[None], recon, targets)[0])
    if initial is None:
        g = np.arange(0.0, 180.0, grid_step)
        grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        vals = _objective(_triplet_stack(grid), recon, targets)
        evals += len(grid)
        best = grid[int(np.argmax(vals))].copy()
        best_val = float(vals.max())
        step = grid_step / 2.0
    else:
        best = np.array([initial.alpha, initial.beta, initial.gamma])
        best_val = float(_objective(_triplet_stack(best[None]), recon, targets)[0])
        evals += 1
        step = 2.0
    moves = np.vstack([np.eye(3), -np.eye(3)])
    converged = False
    for _ in range(10_000):
        trial = best[None, :] + step * moves
        vals = _objective(_triplet_stack(trial), recon, targets)
        evals += len(trial)
        k = int(np.argmax(vals))
        if vals[k] > best_val + 1e-15:
            best, best_val = trial[k], float(vals[k])
            continue
        if step <= tol:
            converged = True
            break
        step /= 2.0
    if identity > best_val:
        # Never do worse than leaving the plates at zero.
        best, best_val = np.zeros(3), identity
    return TripletResult(WaveplateTriplet(*best), best_val, converged, evals)


def predicted_source_qber(compensated, targets=BB84_STATES) -> float:
    """Mean probability of projecting onto the state orthogonal to the target."""
    return 1.0 - mean_fidelity(np.asarray(compensated), np.asarray(targets))


@dataclass
class CompensationStep:
    t: float
    triplet: WaveplateTriplet
    predicted_qber: float
    fidelity: float


class PolarizationCompensator:
    """Per-second tomography and triplet re-optimization against a drifting fibre.

    ``emitted_states(t)`` returns the four Stokes vectors leaving the
    telescope at time ``t`` (source error floor, fibre rotation and the
    currently applied triplet).
    """

    def __init__(self, drift: FiberDrift, intrinsic_qber: float, counts_per_projector: float = 1e5,
                 seed: int = 0):
        self.drift = drift
        self.purity = 1.0 - 2.0 * intrinsic_qber
        self.counts_per_projector = counts_per_projector
        self.rng = np.random.default_rng(seed)
        self.triplet: WaveplateTriplet | None = None
        self.history: list[CompensationStep] = []

    def fibre_states(self, t: float) -> np.ndarray:
        return (self.drift.matrix(t) @ (self.purity * BB84_STATES).T).T

    def update(self, t: float) -> CompensationStep:
        counts = self.rng.poisson(expected_tomography_counts(self.fibre_states(t), self.counts_per_projector))
        recon = tomography(counts)
        res = optimize_triplet(recon, BB84_STATES, initial=self.triplet)
        self.triplet = res.triplet
        comp = (res.triplet.matrix() @ recon.T).T
        step = CompensationStep(t, res.triplet, predicted_source_qber(comp), res.fidelity)
        self.history.append(step)
        return step

    def emitted_states(self, t: float) -> np.ndarray:
        m = np.eye(3) if self.triplet is None else self.triplet.matrix()
        return (m @ self.fibre_states(t).T).T
