"""Source-to-receiver event time correlation.

Detection times are mapped to emission slots in three steps.  The GPS
time-of-flight prior removes the range delay; per 1 s frame the sub-slot
phase and its linear drift are found by maximising the concentration of
``(time - model) mod slot``; the integer slot shift is found by circular
cross-correlation of the per-channel slot histogram against the known
pulse table.  The repeating sequence makes the shift ambiguous modulo its
length, which the GPS prior resolves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_filter

from ..receiver import CH_A, CH_D, CH_H, CH_V
from ..transmitter import BASIS_DA, BASIS_HV, PulseTable, SourceConfig

MIN_EVENTS = 100
PEAK_FACTOR = 5.0
PHASE_BINS = 32
BACKGROUND_DISTANCE = 0.4  # slots; bins further than this from the peak are background
SHIFT_SEARCH = 16  # slots either side of the tracked shift
SUBSAMPLE = 2000


@dataclass(frozen=True)
class CorrelationResult:
    offset: float  # s, receiver minus source clock after removing ToF, at t = 0
    drift: float  # s/s
    residual_width: float  # s, RMS timing residual of signal events
    ambiguity_period: float  # s
    n_frames_ok: int = 0
    n_frames_failed: int = 0


@dataclass
class FrameCorrelation:
    frame: int
    n_events: int
    ok: bool
    phase: float = 0.0  # slots, model value at the frame midpoint (integer part = shift)
    slope: float = 0.0  # slots per second
    peak_ratio: float = 0.0
    width: float = float("nan")  # slots


@dataclass
class CorrelationOutput:
    result: CorrelationResult
    frames: list
    slot: np.ndarray  # global slot per event, -1 where unassigned
    residual: np.ndarray  # slots, event time minus assigned slot time
    frame_of_event: np.ndarray
    frame_ok: dict = field(default_factory=dict)


class CorrelationFailed(RuntimeError):
    """No frame produced a significant correlation peak."""


def smooth_tof(t, tof, window: int = 21, order: int = 2):
    """Savitzky-Golay smoothing of a GPS-derived ToF series."""
    tof = np.asarray(tof, dtype=float)
    n = len(tof)
    w = min(window, n if n % 2 else n - 1)
    if w <= order:
        return tof.copy()
    return savgol_filter(tof, w, order)


def _slot_prior(times, tof_t, tof_s, epochs, slot_period):
    """Emission slot coordinate implied by the ToF prior (float, slots)."""
    emit = times - np.interp(times, tof_t, tof_s)
    if epochs is None or len(epochs) == 0:
        return emit / slot_period, emit
    sec = np.asarray(epochs["second"], dtype=float) if hasattr(epochs, "dtype") and epochs.dtype.names \
        else np.asarray(epochs, dtype=float)[:, 0]
    slots = np.asarray(epochs["slot"], dtype=float) if hasattr(epochs, "dtype") and epochs.dtype.names \
        else np.asarray(epochs, dtype=float)[:, 1]
    if len(sec) == 1:
        return slots[0] + (emit - sec[0]) / slot_period, emit
    i = np.clip(np.searchsorted(sec, emit, side="right") - 1, 0, len(sec) - 1)
    return slots[i] + (emit - sec[i]) / slot_period, emit


def _wrap(x):
    return x - np.round(x)


def _templates(table: PulseTable, config: SourceConfig) -> np.ndarray:
    """Per-channel scores over the pulse table: intensity weight plus state agreement."""
    mu = config.mean_photon[table.intensity]
    weight = np.log(np.maximum(mu, 0.02 * config.nu) / config.mu)
    out = np.empty((4, len(table)))
    for ch, basis, bit in ((CH_H, BASIS_HV, 0), (CH_V, BASIS_HV, 1), (CH_D, BASIS_DA, 0), (CH_A, BASIS_DA, 1)):
        agree = np.where(table.basis == basis, np.where(table.bit == bit, 1.0, -1.0), 0.0)
        agree = np.where(mu > 0, agree, 0.0)
        out[ch] = weight + 2.0 * agree
    return out - out.mean(axis=1, keepdims=True)


def _best_shift(slots, channels, templates, center: int | None, half_range: int):
    """Integer c maximising sum_i T[ch_i, (slot_i + c) mod L]."""
    L = templates.shape[1]
    score = np.zeros(L)
    k = np.mod(slots, L)
    for ch in range(4):
        h = np.bincount(k[channels == ch], minlength=L).astype(float)
        # score[c] = sum_k h[k] T[(k + c) mod L]
        score += np.real(np.fft.ifft(np.conj(np.fft.fft(h)) * np.fft.fft(templates[ch])))
    if center is None:
        c = int(np.argmax(score))
        return c if c <= L // 2 else c - L
    cand = np.arange(center - half_range, center + half_range + 1)
    return int(cand[np.argmax(score[np.mod(cand, L)])])


def _phase_fit(x, tt, max_slope: float, slope_step: float, rng):
    """Grid search over slope, circular mean for the phase; returns (phase, slope, R)."""
    if len(x) > SUBSAMPLE:
        pick = rng.choice(len(x), SUBSAMPLE, replace=False)
        xs, ts = x[pick], tt[pick]
    else:
        xs, ts = x, tt
    slopes = np.arange(-max_slope, max_slope + slope_step / 2, slope_step)
    z = np.exp(2j * np.pi * (xs[None, :] - slopes[:, None] * ts[None, :]))
    r = np.abs(z.mean(axis=1))
    best = int(np.argmax(r))
    slope = slopes[best]
    phase = np.angle(np.mean(np.exp(2j * np.pi * (x - slope * tt)))) / (2 * np.pi)
    return phase, slope


def _refine(x, tt, phase, slope, gate: float):
    """Least-squares update of phase and slope from events near the peak."""
    res = _wrap(x - phase - slope * tt)
    near = np.abs(res) < gate
    if near.sum() < 10:
        return phase, slope
    a = np.vstack([np.ones(near.sum()), tt[near]]).T
    coef, *_ = np.linalg.lstsq(a, res[near], rcond=None)
    return phase + coef[0], slope + coef[1]


def _peak_ratio(res):
    """Peak bin of the wrapped residual histogram over the mean background bin."""
    h, edges = np.histogram(res, bins=PHASE_BINS, range=(-0.5, 0.5))
    centers = 0.5 * (edges[:-1] + edges[1:])
    peak = int(np.argmax(h))
    dist = np.abs(_wrap(centers - centers[peak]))
    bg = h[dist > BACKGROUND_DISTANCE]
    bg_mean = bg.mean() if len(bg) else 0.0
    return float(h[peak] / max(bg_mean, 0.5))


def _signal_width(res, gate: float):
    """RMS of the residual peak after removing a flat background."""
    inner = np.abs(res) < gate
    outer = np.abs(res) >= BACKGROUND_DISTANCE
    bg_density = outer.sum() / (1.0 - 2 * BACKGROUND_DISTANCE)
    n_sig = inner.sum() - bg_density * 2 * gate
    if n_sig <= 3:
        return float("nan")
    bg_m2 = bg_density * (2 * gate ** 3 / 3)
    m2 = max((np.sum(res[inner] ** 2) - bg_m2) / n_sig, 0.0)
    return float(np.sqrt(m2))


def correlate(tags, channels, resolution: float, table: PulseTable, config: SourceConfig,
              tof_t, tof_s, epochs=None, frame_length: float = 1.0, window: float = 0.4,
              max_slope: float = 2.0, slope_step: float = 0.05, smooth_window: int = 21,
              seed: int = 0, fallback: bool = True) -> CorrelationOutput:
    """Assign detections to emitted slots.

    ``tof_t``/``tof_s`` is the GPS-derived time-of-flight series; it is smoothed
    before use.  ``window`` is the half-width (slots) of the acceptance window
    around each slot centre.  Frames without a significant peak are
    correlation failures; with ``fallback`` their events are still assigned by
    the tracked model (for diagnostics such as the link-off QBER) but the frame
    is flagged.
    """
    T = config.slot_period
    L = len(table)
    times = np.asarray(tags, dtype=np.float64) * resolution
    channels = np.asarray(channels)
    n = len(times)
    tof_t = np.asarray(tof_t, dtype=float)
    tof_s = smooth_tof(tof_t, tof_s, smooth_window)
    x, emit = _slot_prior(times, tof_t, tof_s, epochs, T)
    frame = np.floor(emit / frame_length).astype(np.int64)
    templates = _templates(table, config)
    rng = np.random.default_rng(seed)

    slot = np.full(n, -1, dtype=np.int64)
    residual = np.full(n, np.nan)
    frames: list[FrameCorrelation] = []
    if n == 0:
        raise CorrelationFailed("no detections")
    order_ok = np.all(np.diff(frame) >= 0)
    if not order_ok:
        raise ValueError("detections must be sorted in time")
    ids, starts = np.unique(frame, return_index=True)
    bounds = np.append(starts, n)

    # First pass: phase and slope per frame.
    fits = {}
    for f, lo, hi in zip(ids, bounds[:-1], bounds[1:]):
        fc = FrameCorrelation(int(f), int(hi - lo), False)
        frames.append(fc)
        if hi - lo < MIN_EVENTS:
            continue
        tmid = (f + 0.5) * frame_length
        xx, tt = x[lo:hi], emit[lo:hi] - tmid
        phase, slope = _phase_fit(xx, tt, max_slope, slope_step, rng)
        phase, slope = _refine(xx, tt, phase, slope, 0.3)
        res = _wrap(xx - phase - slope * tt)
        ratio = _peak_ratio(res)
        fc.peak_ratio = ratio
        fc.slope = slope
        if ratio < PEAK_FACTOR:
            continue
        fc.ok = True
        fc.width = _signal_width(res, 0.3)
        fits[int(f)] = (phase, slope)

    if not fits and not fallback:
        raise CorrelationFailed("no frame shows a correlation peak")

    # Integer shifts: global search on the strongest frames, then tracking.
    by_frame = {fc.frame: fc for fc in frames}
    ok_frames = sorted(fits)
    track_t, track_v = [], []
    for f in ok_frames:
        lo, hi = bounds[np.searchsorted(ids, f)], bounds[np.searchsorted(ids, f) + 1]
        tmid = (f + 0.5) * frame_length
        phase, slope = fits[f]
        tt = emit[lo:hi] - tmid
        base = np.round(x[lo:hi] - phase - slope * tt).astype(np.int64)
        if track_v:
            pred = _predict(track_t, track_v, tmid)
            center = int(np.round(phase - pred))
            c = _best_shift(base, channels[lo:hi], templates, center, SHIFT_SEARCH)
        else:
            c = _best_shift(base, channels[lo:hi], templates, None, 0)
        total = phase - c  # slot = x - total - slope * tt
        by_frame[f].phase = total
        track_t.append(tmid)
        track_v.append(total)

    frame_ok = {fc.frame: fc.ok for fc in frames}
    if track_v:
        tt_arr, vv_arr = np.array(track_t), np.array(track_v)
        if len(tt_arr) >= 2:
            drift_slots, off_slots = np.polyfit(tt_arr, vv_arr, 1)
        else:
            drift_slots, off_slots = 0.0, vv_arr[0]
    else:
        drift_slots, off_slots = 0.0, 0.0

    for f, lo, hi in zip(ids, bounds[:-1], bounds[1:]):
        tmid = (f + 0.5) * frame_length
        tt = emit[lo:hi] - tmid
        if f in fits:
            model = by_frame[f].phase + by_frame[f].slope * tt
        elif fallback:
            model = (_predict(track_t, track_v, tmid) if track_v else 0.0) + drift_slots * tt
        else:
            continue
        r = x[lo:hi] - model
        s = np.round(r).astype(np.int64)
        res = r - s
        residual[lo:hi] = res
        keep = np.abs(res) <= window
        slot[lo:hi] = np.where(keep, s, -1)

    widths = np.array([fc.width for fc in frames if fc.ok and np.isfinite(fc.width)])
    result = CorrelationResult(
        offset=float(off_slots * T),
        drift=float(drift_slots * T),
        residual_width=float(np.median(widths) * T) if len(widths) else float("nan"),
        ambiguity_period=L * T,
        n_frames_ok=len(fits),
        n_frames_failed=len(frames) - len(fits),
    )
    return CorrelationOutput(result, frames, slot, residual, frame, frame_ok)


def _predict(track_t, track_v, t):
    """Offset model at ``t`` from the most recent tracked frames."""
    tt = np.asarray(track_t[-8:])
    vv = np.asarray(track_v[-8:])
    if len(tt) < 2:
        return float(vv[-1])
    a, b = np.polyfit(tt - tt[-1], vv, 1)
    return float(a * (t - tt[-1]) + b)
