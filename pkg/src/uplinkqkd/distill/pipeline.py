"""Receiver-to-key pipeline: correlation through privacy amplification."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..transmitter import DECOY, SIGNAL, VACUUM, PulseTable, SourceConfig
from .correlate import CorrelationFailed, CorrelationOutput, correlate
from .decoy import DecoyEstimates, DecoyObservables, InsufficientStatistics, decoy_bounds
from .keyrate import secure_length
from .ldpc import BLOCK_LENGTH, F_TARGET, ec_reconcile
from .privacy import privacy_amplify
from .sift import build_frames, sift, snr_filter, write_frames_csv

N_SIGMA = 10.0


@dataclass(frozen=True)
class DistillConfig:
    snr_threshold: float = 0.0
    n_sigma: float = N_SIGMA
    finite_size: bool = True
    frame_length: float = 1.0
    window: float = 0.4  # slots, half-width of the slot acceptance window
    f_target: float = F_TARGET
    block_length: int = BLOCK_LENGTH
    smooth_window: int = 21
    seed: int = 0

    def __post_init__(self):
        if self.snr_threshold < 0:
            raise ValueError("snr_threshold must be non-negative")
        if not 0 < self.window <= 0.5:
            raise ValueError("window must be in (0, 0.5] slots")
        if self.n_sigma < 0:
            raise ValueError("n_sigma must be non-negative")


@dataclass
class DistillReport:
    status: str
    correlation: dict
    n_frames: int
    n_frames_kept: int
    n_frames_correlated: int
    sifted_signal: int
    sifted_decoy: int
    qber_signal: float
    qber_decoy: float
    observables: dict | None = None
    estimates: dict | None = None
    leak_ec: int = 0
    ec_efficiency: float = float("nan")
    ec_blocks: int = 0
    ec_blocks_verified: int = 0
    verified_bits: int = 0
    secure_length: int = 0
    detections_total: int = 0
    frames: list = field(default_factory=list, repr=False)
    final_key: np.ndarray = field(default=None, repr=False)
    correlation_output: CorrelationOutput = field(default=None, repr=False)

    @property
    def sifted_total(self) -> int:
        return self.sifted_signal + self.sifted_decoy

    def as_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items()
             if k not in ("frames", "final_key", "correlation_output")}
        return _jsonable(d)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return None if not np.isfinite(v) else v
    return x


def pulses_per_class(table: PulseTable, slot_start: int, slot_stop: int) -> np.ndarray:
    """Emitted pulses of each intensity class in the slot range [start, stop)."""
    L = len(table)
    onehot = np.zeros((L + 1, 3), dtype=np.int64)
    onehot[1:, :] = np.eye(3, dtype=np.int64)[table.intensity]
    prefix = np.cumsum(onehot, axis=0)

    def upto(s):
        q, r = divmod(int(s), L)
        return q * prefix[L] + prefix[r]

    return upto(slot_stop) - upto(slot_start)


def distill(tags, channels, resolution: float, table: PulseTable, source: SourceConfig,
            tof_t, tof_s, config: DistillConfig = DistillConfig(), epochs=None) -> DistillReport:
    """Run the full classical post-processing on one pass worth of detections."""
    tags = np.asarray(tags)
    channels = np.asarray(channels)
    try:
        corr = correlate(tags, channels, resolution, table, source, tof_t, tof_s, epochs=epochs,
                         frame_length=config.frame_length, window=config.window,
                         smooth_window=config.smooth_window, seed=config.seed)
    except CorrelationFailed:
        return DistillReport(status="correlation_failed", correlation={}, n_frames=0, n_frames_kept=0,
                             n_frames_correlated=0, sifted_signal=0, sifted_decoy=0, qber_signal=float("nan"),
                             qber_decoy=float("nan"), detections_total=int(len(tags)),
                             final_key=np.zeros(0, dtype=np.uint8))
    frames = build_frames(corr.frame_of_event)
    for fr in frames:
        fr.correlated = bool(corr.frame_ok.get(fr.frame_index, False))
    sig_key, dec_key, frames = sift(corr.slot, channels, corr.frame_of_event, table, frames)
    snr_filter(frames, config.snr_threshold)
    use = [fr for fr in frames if fr.kept and fr.correlated]
    use_ids = np.array([fr.frame_index for fr in use], dtype=np.int64)

    sig = sig_key.select(np.isin(sig_key.frame, use_ids))
    dec = dec_key.select(np.isin(dec_key.frame, use_ids))
    report = DistillReport(
        status="no_key",
        correlation=asdict(corr.result),
        n_frames=len(frames),
        n_frames_kept=sum(fr.kept for fr in frames),
        n_frames_correlated=sum(fr.correlated for fr in frames),
        sifted_signal=len(sig),
        sifted_decoy=len(dec),
        qber_signal=sig.qber,
        qber_decoy=dec.qber,
        detections_total=int(len(tags)),
        frames=frames,
        correlation_output=corr,
    )
    if not use:
        report.status = "correlation_failed" if report.n_frames_correlated == 0 else "no_frames_kept"
        report.final_key = np.zeros(0, dtype=np.uint8)
        return report

    slots_per_frame = int(round(source.clock_rate * config.frame_length))
    n_pulses = np.zeros(3, dtype=np.int64)
    for fr in use:
        s0 = fr.frame_index * slots_per_frame
        n_pulses += pulses_per_class(table, s0, s0 + slots_per_frame)
    det = np.array([sum(fr.det_signal for fr in use), sum(fr.det_decoy for fr in use),
                    sum(fr.det_vacuum for fr in use)], dtype=float)
    obs = DecoyObservables(
        Q_mu=det[SIGNAL] / n_pulses[SIGNAL], Q_nu=det[DECOY] / n_pulses[DECOY],
        E_mu=sig.qber if len(sig) else 0.5, E_nu=dec.qber if len(dec) else 0.5,
        Y0=det[VACUUM] / max(n_pulses[VACUUM], 1),
        N_mu=float(n_pulses[SIGNAL]), N_nu=float(n_pulses[DECOY]), N_vac=float(n_pulses[VACUUM]),
        n_err_mu=float(len(sig)), n_err_nu=float(len(dec)),
    )
    report.observables = asdict(obs)
    n_sigma = config.n_sigma if config.finite_size else 0.0
    try:
        est: DecoyEstimates | None = decoy_bounds(obs, source.mu, source.nu, n_sigma)
        report.estimates = est.as_dict()
    except InsufficientStatistics:
        est = None

    ec = ec_reconcile(sig.alice, sig.bob, sig.qber, block_length=config.block_length,
                      f_target=config.f_target, seed=config.seed)
    report.leak_ec = ec.leak_ec
    report.ec_efficiency = ec.efficiency
    report.ec_blocks = ec.n_blocks
    report.ec_blocks_verified = int(ec.verified.sum())
    report.verified_bits = ec.n_verified_bits
    if est is None:
        report.status = "insufficient_statistics"
        report.final_key = np.zeros(0, dtype=np.uint8)
        return report

    ell = secure_length(est, ec.n_verified_bits, ec.leak_ec, source.mu)
    report.secure_length = max(ell, 0)
    if ell <= 0:
        report.final_key = np.zeros(0, dtype=np.uint8)
        return report
    rng = np.random.default_rng([config.seed, 0x9A])
    seed_bits = rng.integers(0, 2, ec.n_verified_bits + ell - 1, dtype=np.uint8)
    report.final_key = privacy_amplify(ec.corrected, ell, seed_bits)
    report.status = "key"
    return report


def write_outputs(report: DistillReport, out_dir, prefix: str = "") -> dict:
    """Key file (packed bits), JSON report and frames CSV; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "key": out / f"{prefix}final_key.bin",
        "report": out / f"{prefix}distill_report.json",
        "frames": out / f"{prefix}frames.csv",
    }
    key = report.final_key if report.final_key is not None else np.zeros(0, dtype=np.uint8)
    paths["key"].write_bytes(np.packbits(key).tobytes())
    d = report.as_dict()
    d["final_key_bits"] = int(len(key))
    paths["report"].write_text(json.dumps(d, indent=2, sort_keys=True))
    write_frames_csv(paths["frames"], report.frames)
    return paths
