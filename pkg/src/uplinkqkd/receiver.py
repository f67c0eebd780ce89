"""Passive-basis four-detector polarization analyzer and time tagging."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CH_H, CH_V, CH_D, CH_A = 0, 1, 2, 3
CHANNEL_NAMES = ("H", "V", "D", "A")
TAG_RESOLUTION = 2.5e-9 / 32  # 78.125 ps

TIMETAG_DTYPE = np.dtype([("tag", "<u8"), ("channel", "u1")])


@dataclass(frozen=True)
class AnalyzerConfig:
    basis_split: float = 0.5
    # Per output port H, V, D, A; measured units span 532:1 to 2577:1.
    contrast: tuple = (1500.0, 2577.0, 532.0, 1000.0)

    def __post_init__(self):
        if not 0.0 < self.basis_split < 1.0:
            raise ValueError("basis_split must be in (0, 1)")
        if len(self.contrast) != 4 or min(self.contrast) <= 1.0:
            raise ValueError("need four contrasts, each > 1")

    @property
    def leak(self) -> np.ndarray:
        """Probability that a photon in a port's own state exits the partner port."""
        return 1.0 / (1.0 + np.asarray(self.contrast, dtype=float))


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 0.45
    dark_rate_per_detector: tuple = (285.0 / 4,) * 4
    dead_time: float = 1e-6
    timing_jitter_sigma: float = 0.5e-9
    tag_resolution: float = TAG_RESOLUTION

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must be in (0, 1]")
        if self.tag_resolution <= 0:
            raise ValueError("tag_resolution must be positive")
        if self.dead_time < 0 or self.timing_jitter_sigma < 0:
            raise ValueError("dead_time and jitter must be non-negative")
        if len(self.dark_rate_per_detector) != 4:
            raise ValueError("need four dark rates")


@dataclass
class DetectionEvents:
    """Column store of detection events, sorted by tag."""

    tag: np.ndarray
    channel: np.ndarray
    is_signal: np.ndarray = field(default=None)  # ground truth, not written to disk

    def __len__(self):
        return len(self.tag)

    def times(self, resolution: float = TAG_RESOLUTION) -> np.ndarray:
        return self.tag.astype(np.float64) * resolution


def channel_probabilities(states, analyzer: AnalyzerConfig = AnalyzerConfig()) -> np.ndarray:
    """Click probabilities over (H, V, D, A) for Stokes vectors ``states`` (N, 3)."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    f = analyzer.leak
    p_h = 0.5 * (1.0 + s[:, 0])
    p_d = 0.5 * (1.0 + s[:, 1])
    out = np.empty((len(s), 4))
    out[:, CH_H] = p_h * (1 - f[CH_H]) + (1 - p_h) * f[CH_V]
    out[:, CH_V] = 1.0 - out[:, CH_H]
    out[:, CH_D] = p_d * (1 - f[CH_D]) + (1 - p_d) * f[CH_A]
    out[:, CH_A] = 1.0 - out[:, CH_D]
    out[:, :2] *= analyzer.basis_split
    out[:, 2:] *= 1.0 - analyzer.basis_split
    return out


def sample_channels(states, analyzer: AnalyzerConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw an output port for each photon with Stokes vector ``states`` (N, 3)."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    n = len(s)
    f = analyzer.leak
    use_hv = rng.random(n) < analyzer.basis_split
    u = rng.random(n)
    p_h = 0.5 * (1.0 + s[:, 0])
    p_h = p_h * (1 - f[CH_H]) + (1 - p_h) * f[CH_V]
    p_d = 0.5 * (1.0 + s[:, 1])
    p_d = p_d * (1 - f[CH_D]) + (1 - p_d) * f[CH_A]
    return np.where(use_hv, np.where(u < p_h, CH_H, CH_V),
                    np.where(u < p_d, CH_D, CH_A)).astype(np.uint8)


def measure_polarization(state, analyzer: AnalyzerConfig, rng: np.random.Generator) -> int:
    return int(sample_channels(np.asarray(state)[None, :], analyzer, rng)[0])


def apply_dead_time(times: np.ndarray, dead_time: float) -> np.ndarray:
    """Keep-mask for one detector's sorted event times (non-paralyzable).

    An event is dropped if it falls within ``dead_time`` of the last kept one.
    """
    n = len(times)
    keep = np.ones(n, dtype=bool)
    if n < 2 or dead_time <= 0:
        return keep
    for _ in range(64):
        last = np.where(keep, times, -np.inf)
        prev_kept = np.empty(n)
        prev_kept[0] = -np.inf
        prev_kept[1:] = np.maximum.accumulate(last)[:-1]
        new = (times - prev_kept) >= dead_time
        if np.array_equal(new, keep):
            return keep
        keep = new
    # Long chains: finish sequentially.
    keep[:] = True
    last_t = -np.inf
    for i in range(n):
        if times[i] - last_t >= dead_time:
            last_t = times[i]
        else:
            keep[i] = False
    return keep


def quantize(times: np.ndarray, resolution: float = TAG_RESOLUTION) -> np.ndarray:
    return np.rint(np.asarray(times) / resolution).astype(np.int64)


def dark_counts(window: tuple[float, float], config: DetectorConfig, rng: np.random.Generator,
                extra_rate_total: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Poisson background arrival times and channels over ``window``."""
    t0, t1 = window
    rates = np.asarray(config.dark_rate_per_detector, dtype=float) + extra_rate_total / 4.0
    counts = rng.poisson(rates * (t1 - t0))
    times = rng.uniform(t0, t1, size=counts.sum())
    chans = np.repeat(np.arange(4, dtype=np.uint8), counts)
    return times, chans


def register(times: np.ndarray, channels: np.ndarray, is_signal: np.ndarray, config: DetectorConfig,
             rng: np.random.Generator) -> DetectionEvents:
    """Add timing jitter, enforce per-detector dead time and quantize to tags."""
    t = times
    if config.timing_jitter_sigma > 0:
        t = t + rng.normal(0.0, config.timing_jitter_sigma, size=len(t))
    order = np.lexsort((t, channels))
    t, ch, sig = t[order], channels[order], is_signal[order]
    keep = np.ones(len(t), dtype=bool)
    bounds = np.searchsorted(ch, np.arange(5))
    for c in range(4):
        lo, hi = bounds[c], bounds[c + 1]
        keep[lo:hi] = apply_dead_time(t[lo:hi], config.dead_time)
    t, ch, sig = t[keep], ch[keep], sig[keep]
    tags = quantize(t, config.tag_resolution)
    order = np.lexsort((ch, tags))
    return DetectionEvents(tags[order].astype(np.uint64), ch[order], sig[order])


def detect_stream(arrival_times, states, config: DetectorConfig = DetectorConfig(),
                  analyzer: AnalyzerConfig = AnalyzerConfig(), background_rate: float | None = None,
                  rng: np.random.Generator | None = None, window: tuple[float, float] | None = None,
                  path_efficiency: float | None = None) -> DetectionEvents:
    """Turn photon arrivals at the analyzer into time-tagged detections.

    Each arrival survives with ``path_efficiency`` (default: detector
    efficiency), is routed to a port by its polarization, and joins Poisson
    dark counts before jitter, dead time and tag quantization.
    ``background_rate`` (total, Hz) overrides the configured dark rates.
    """
    rng = rng if rng is not None else np.random.default_rng()
    arrival_times = np.asarray(arrival_times, dtype=float)
    if len(arrival_times) > 1 and np.any(np.diff(arrival_times) < 0):
        raise ValueError("arrival times must be sorted")
    eff = config.efficiency if path_efficiency is None else path_efficiency
    survive = rng.random(len(arrival_times)) < eff
    sig_t = arrival_times[survive]
    sig_ch = sample_channels(np.asarray(states, dtype=float).reshape(-1, 3)[survive], analyzer, rng) \
        if len(sig_t) else np.zeros(0, dtype=np.uint8)
    if window is None:
        window = (0.0, float(arrival_times[-1]) if len(arrival_times) else 1.0)
    cfg = config
    if background_rate is not None:
        cfg = DetectorConfig(config.efficiency, (background_rate / 4.0,) * 4, config.dead_time,
                             config.timing_jitter_sigma, config.tag_resolution)
    dk_t, dk_ch = dark_counts(window, cfg, rng)
    t = np.concatenate([sig_t, dk_t])
    ch = np.concatenate([sig_ch, dk_ch]).astype(np.uint8)
    sig = np.concatenate([np.ones(len(sig_t), bool), np.zeros(len(dk_t), bool)])
    return register(t, ch, sig, config, rng)


def write_timetags(path, sidecar_path, events: DetectionEvents, resolution: float = TAG_RESOLUTION,
                   start_epoch: float = 0.0) -> None:
    """Little-endian records {uint64 tag, uint8 channel} plus a JSON sidecar."""
    rec = np.empty(len(events), dtype=TIMETAG_DTYPE)
    rec["tag"] = events.tag
    rec["channel"] = events.channel
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())
    with open(sidecar_path, "w") as fh:
        json.dump({"resolution_s": resolution, "start_epoch_s": start_epoch, "n_events": len(events),
                   "record": "uint64 tag, uint8 channel (0=H,1=V,2=D,3=A), little-endian"},
                  fh, indent=2, sort_keys=True)


def read_timetags(path, sidecar_path=None) -> tuple[DetectionEvents, float]:
    resolution = TAG_RESOLUTION
    if sidecar_path is not None:
        with open(sidecar_path) as fh:
            resolution = float(json.load(fh)["resolution_s"])
    rec = np.fromfile(path, dtype=TIMETAG_DTYPE)
    return DetectionEvents(rec["tag"].copy(), rec["channel"].copy()), resolution
