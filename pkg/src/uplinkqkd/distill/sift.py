"""Basis sifting, per-frame statistics and the SNR frame filter."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..receiver import CH_A, CH_D, CH_H, CH_V
from ..transmitter import DECOY, SIGNAL, VACUUM, PulseTable

# Measurement basis and bit per detector channel: H=0, V=1 in HV; D=0, A=1 in DA.
CHANNEL_BASIS = np.zeros(4, dtype=np.uint8)
CHANNEL_BIT = np.zeros(4, dtype=np.uint8)
CHANNEL_BASIS[[CH_D, CH_A]] = 1
CHANNEL_BIT[[CH_V, CH_A]] = 1

FRAMES_CSV_HEADER = ("frame", "counts", "kept", "qber_sig", "qber_dec")


@dataclass
class FrameData:
    frame_index: int
    total_counts: int
    start: int  # first event index of the frame in the event arrays
    stop: int
    kept: bool = True
    correlated: bool = True
    sifted_signal: int = 0
    errors_signal: int = 0
    sifted_decoy: int = 0
    errors_decoy: int = 0
    det_signal: int = 0
    det_decoy: int = 0
    det_vacuum: int = 0

    @property
    def qber_signal(self) -> float:
        return self.errors_signal / self.sifted_signal if self.sifted_signal else float("nan")

    @property
    def qber_decoy(self) -> float:
        return self.errors_decoy / self.sifted_decoy if self.sifted_decoy else float("nan")


@dataclass
class SiftedKey:
    """Matched-basis bit pairs of one intensity class, in detection order."""

    alice: np.ndarray
    bob: np.ndarray
    frame: np.ndarray

    def __len__(self):
        return len(self.alice)

    @property
    def qber(self) -> float:
        return float(np.mean(self.alice != self.bob)) if len(self.alice) else float("nan")

    def select(self, mask) -> "SiftedKey":
        return SiftedKey(self.alice[mask], self.bob[mask], self.frame[mask])


def build_frames(event_frame: np.ndarray) -> list[FrameData]:
    """Group sorted per-event frame indices into frames (empty frames omitted)."""
    if len(event_frame) == 0:
        return []
    if np.any(np.diff(event_frame) < 0):
        raise ValueError("events must be sorted by frame")
    ids, starts, counts = np.unique(event_frame, return_index=True, return_counts=True)
    return [FrameData(int(f), int(c), int(s), int(s + c)) for f, s, c in zip(ids, starts, counts)]


def sift(slot: np.ndarray, channel: np.ndarray, event_frame: np.ndarray, table: PulseTable,
         frames: list[FrameData] | None = None):
    """Sift assigned events against the pulse table.

    Returns ``(signal_key, decoy_key, frames)``.  Events with ``slot < 0`` are
    unassigned and ignored.  Frame statistics are filled in place; vacuum-slot
    detections are counted per frame for the background yield.
    """
    slot = np.asarray(slot)
    channel = np.asarray(channel)
    if frames is None:
        frames = build_frames(event_frame)
    ok = slot >= 0
    k = np.mod(np.where(ok, slot, 0), len(table))
    inten = np.where(ok, table.intensity[k], 255)
    prep_basis = table.basis[k]
    prep_bit = table.bit[k]
    meas_basis = CHANNEL_BASIS[channel]
    meas_bit = CHANNEL_BIT[channel]
    match = ok & (prep_basis == meas_basis)
    err = prep_bit != meas_bit

    keys = {}
    for cls in (SIGNAL, DECOY):
        m = match & (inten == cls)
        keys[cls] = SiftedKey(prep_bit[m].astype(np.uint8), meas_bit[m].astype(np.uint8), event_frame[m])

    for fr in frames:
        sl = slice(fr.start, fr.stop)
        i, mt, e = inten[sl], match[sl], err[sl]
        fr.det_signal = int(np.sum(i == SIGNAL))
        fr.det_decoy = int(np.sum(i == DECOY))
        fr.det_vacuum = int(np.sum(i == VACUUM))
        s, d = mt & (i == SIGNAL), mt & (i == DECOY)
        fr.sifted_signal, fr.errors_signal = int(s.sum()), int((s & e).sum())
        fr.sifted_decoy, fr.errors_decoy = int(d.sum()), int((d & e).sum())
    return keys[SIGNAL], keys[DECOY], frames


def snr_filter(frames: list[FrameData], threshold: float) -> list[FrameData]:
    """Mark and return the frames whose total counts reach ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    for fr in frames:
        fr.kept = fr.total_counts >= threshold
    return [fr for fr in frames if fr.kept]


def default_threshold(background_rate: float, frame_length: float = 1.0) -> float:
    """Threshold rule for new scenarios: max(1000, 5x the expected background per frame)."""
    return max(1000.0, 5.0 * background_rate * frame_length)


def write_frames_csv(path, frames: list[FrameData]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FRAMES_CSV_HEADER)
        for fr in frames:
            w.writerow([fr.frame_index, fr.total_counts, int(fr.kept),
                        f"{fr.qber_signal:.6f}", f"{fr.qber_decoy:.6f}"])
