"""End-to-end pass orchestration, run summaries and reference comparison.

A run directory holds the resolved configuration (with every seed), all
artifacts and ``summary.json``; re-running that configuration reproduces the
directory byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import kinematics as kin
from .channel import LinkBudgetParams, LinkSample, link_series, write_link_csv
from .distill import DistillConfig, distill, write_outputs
from .events import ReceiverClock, sample_detections, simulate_receiver
from .kinematics import PassConfig
from .pointing import AcquisitionConfig, simulate_acquisition, write_pointing_csv
from .receiver import AnalyzerConfig, DetectorConfig, write_timetags
from .transmitter import FiberDrift, PolarizationCompensator, SourceConfig, generate_sequence, write_source_log

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SEED_KEYS = ("trajectory", "pointing", "sequence", "fiber", "compensator", "events", "distill")

EXIT_OK = 0
EXIT_ACQUISITION_FAILED = 2
EXIT_NO_KEY = 3
EXIT_CONFIG_ERROR = 4


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


@dataclass(frozen=True)
class FiberSettings:
    """Fibre drift model and tomography statistics for the compensator."""

    correlation_time: float = 300.0
    amplitude: float = 0.4
    n_modes: int = 4
    counts_per_projector: float = 1e5

    def __post_init__(self):
        if self.correlation_time <= 0 or self.n_modes < 1 or self.counts_per_projector <= 0:
            raise ValueError("fiber settings must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one pass.

    The ``seeds`` dict is the single source of randomness; the nested
    ``seed`` fields of the pass, acquisition and distill configs are
    overwritten from it.
    """

    pass_config: PassConfig
    pass_id: str | None = None
    label: str = ""
    start_time_utc: str | None = None
    link: LinkBudgetParams = LinkBudgetParams()
    pointing_sigma_deg: float | None = None  # None: per-second value from the pointing simulation
    pin_mean_loss_db: float | None = None
    extra_loss_db: float = 0.0
    source: SourceConfig = SourceConfig()
    analyzer: AnalyzerConfig = AnalyzerConfig()
    detector: DetectorConfig = DetectorConfig()
    acquisition: AcquisitionConfig = AcquisitionConfig()
    clock: ReceiverClock = ReceiverClock()
    fiber: FiberSettings = FiberSettings()
    distill: DistillConfig = DistillConfig()
    quantum_link: str = "auto"
    seeds: dict = field(default_factory=dict)
    output_dir: str = "runs"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if not isinstance(self.pass_config, PassConfig):
            raise ConfigError("a pass configuration is required")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.quantum_link not in ("auto", "off"):
            raise ConfigError("quantum_link must be 'auto' or 'off'")
        missing = [k for k in SEED_KEYS if not isinstance(self.seeds.get(k), int) or isinstance(self.seeds.get(k), bool)]
        if missing:
            raise ConfigError(f"explicit integer seeds required for: {', '.join(missing)}")
        extra = set(self.seeds) - set(SEED_KEYS)
        if extra:
            raise ConfigError(f"unknown seed keys: {', '.join(sorted(extra))}")
        if self.pointing_sigma_deg is not None and self.pointing_sigma_deg < 0:
            raise ConfigError("pointing_sigma_deg must be non-negative")
        object.__setattr__(self, "pass_config", replace(self.pass_config, seed=self.seeds["trajectory"]))
        object.__setattr__(self, "acquisition", replace(self.acquisition, seed=self.seeds["pointing"]))
        object.__setattr__(self, "distill", replace(self.distill, seed=self.seeds["distill"]))

    def with_seed(self, master: int) -> "RunConfig":
        return replace(self, seeds=derive_seeds(master))

    def to_dict(self) -> dict:
        d = _plain(asdict(self))
        d["pass"] = d.pop("pass_config")
        d["pass"]["kind"] = self.pass_config.kind.value
        return {"schema_version": d.pop("schema_version"), **d}


def derive_seeds(master: int) -> dict:
    """Independent per-subsystem seeds from one master seed."""
    children = np.random.SeedSequence(int(master)).spawn(len(SEED_KEYS))
    return {k: int(c.generate_state(1, dtype=np.uint32)[0]) for k, c in zip(SEED_KEYS, children)}


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if hasattr(x, "value") and not isinstance(x, (int, float, str)):
        return x.value
    return x


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for k, v in data.items():
        tp = hints.get(k)
        if is_dataclass(tp) and isinstance(v, dict):
            v = _build(tp, v, f"{where}.{k}")
        elif isinstance(v, list):
            v = _tuplify(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, master_seed: int | None = None) -> RunConfig:
    """Build a RunConfig from its JSON form; ``master_seed`` replaces all seeds."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    data = dict(data)
    if "pass" not in data:
        raise ConfigError("missing 'pass' section")
    data["pass_config"] = data.pop("pass")
    if master_seed is not None:
        data["seeds"] = derive_seeds(master_seed)
    return _build(RunConfig, data, "config")


def load_config(path, master_seed: int | None = None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return config_from_dict(data, master_seed)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def replica_ids() -> list[str]:
    base = resources.files("uplinkqkd") / "data" / "replicas"
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def replica_config(pass_id: str, master_seed: int | None = None) -> RunConfig:
    """Bundled replica configuration for a reference pass."""
    path = resources.files("uplinkqkd") / "data" / "replicas" / f"{pass_id}.json"
    if not path.is_file():
        raise ConfigError(f"no bundled replica '{pass_id}'; known: {', '.join(replica_ids())}")
    return config_from_dict(json.loads(path.read_text()), master_seed)


# --- summaries ------------------------------------------------------------

# (field, row label, unit); the order follows the reference table.
SUMMARY_ROWS = (
    ("pass_label", "Pass", ""),
    ("classical_link_duration", "Classical link duration", "s"),
    ("quantum_link_duration", "Quantum link duration", "s"),
    ("mean_speed", "Mean speed", "km/h"),
    ("max_angular_speed", "Maximum angular speed", "deg/s"),
    ("tx_pointing_error", "Transmitter pointing error", "deg"),
    ("rx_pointing_error", "Receiver pointing error", "deg"),
    ("rx_fine_pointing_error", "Receiver fine-pointing error", "deg"),
    ("source_qber", "Source QBER", "%"),
    ("signal_qber", "Signal QBER", "%"),
    ("decoy_qber", "Decoy QBER", "%"),
    ("theoretical_loss", "Theoretical loss", "dB"),
    ("measured_loss", "Mean measured loss", "dB"),
    ("ec_efficiency", "Error correction efficiency", ""),
    ("snr_threshold", "Signal-to-noise threshold", "counts"),
    ("sifted_key_length", "Sifted key length", "bits"),
    ("secure_key_length", "Secure key length", "bits"),
)


@dataclass
class PassSummary:
    pass_label: str
    classical_link_duration: float
    quantum_link_duration: float
    mean_speed: float | None
    max_angular_speed: float
    tx_pointing_error: float | None
    rx_pointing_error: float | None
    rx_fine_pointing_error: float | None
    source_qber: float | None
    signal_qber: float | None
    decoy_qber: float | None
    theoretical_loss: float | None
    measured_loss: float | None
    ec_efficiency: float | None
    snr_threshold: float
    sifted_key_length: int
    secure_key_length: int
    pass_id: str | None = None
    status: str = ""
    finite_size: bool = True
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.quantum_link_duration > self.classical_link_duration + 1e-9:
            raise ValueError("quantum link duration exceeds classical link duration")
        if self.secure_key_length > self.sifted_key_length:
            raise ValueError("secure key longer than sifted key")

    def rows(self) -> list[tuple[str, str, object]]:
        return [(label, unit, getattr(self, name)) for name, label, unit in SUMMARY_ROWS]

    def as_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "PassSummary":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class RunResult:
    summary: PassSummary
    exit_code: int
    out_dir: Path
    report: object = None


def _finite_or_none(x, scale=1.0):
    if x is None:
        return None
    x = float(x)
    return x * scale if math.isfinite(x) else None


def measured_loss_series(counts, background_rate: float, source: SourceConfig, frame_length: float = 1.0):
    """Per-frame loss (dB) inverted from total counts minus the expected background.

    Solves ``sum_c p_c (1 - exp(-mu_c eta)) * R * T = counts - background * T``
    for ``eta``; frames with no excess over background give NaN.
    """
    p = source.class_probabilities
    mu = source.mean_photon
    pulses = source.clock_rate * frame_length
    out = []
    for c in np.asarray(counts, dtype=float):
        excess = c - background_rate * frame_length
        if excess <= 0:
            out.append(float("nan"))
            continue
        target = excess / pulses
        cap = float(np.sum(p * -np.expm1(-mu)))
        if target >= cap:
            out.append(0.0)
            continue
        eta = brentq(lambda e: float(np.sum(p * -np.expm1(-mu * e))) - target, 0.0, 1.0, xtol=1e-15)
        out.append(-10.0 * math.log10(eta))
    return np.array(out)


def _compensate(config: RunConfig, seconds):
    """Per-second compensated states and predicted source QBER."""
    f = config.fiber
    drift = FiberDrift(seed=config.seeds["fiber"], correlation_time=f.correlation_time,
                       amplitude=f.amplitude, n_modes=f.n_modes)
    comp = PolarizationCompensator(drift, config.source.intrinsic_qber, f.counts_per_projector,
                                   seed=config.seeds["compensator"])
    states, qber = {}, {}
    for s in seconds:
        step = comp.update(float(s))
        states[int(s)] = comp.emitted_states(float(s))
        qber[int(s)] = step.predicted_qber

    def states_fn(sec):
        if sec not in states:
            states[sec] = comp.emitted_states(float(sec))
        return states[sec]

    return states_fn, qber


def run_pass(config: RunConfig, out_dir=None) -> RunResult:
    """Simulate one pass end to end and write all artifacts to ``out_dir``."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.json")
    pc = config.pass_config
    n_seconds = int(math.ceil(pc.duration))

    log.info("trajectory: %s %.0f m, %.0f s", pc.kind.value, pc.nominal_distance, pc.duration)
    samples = kin.generate_trajectory(pc)
    kin.write_trajectory_csv(out / "trajectory.csv", samples)
    col = kin.columns(samples)

    log.info("pointing")
    acq = simulate_acquisition(col["t"], col["azimuth"], col["elevation"], config.acquisition)
    write_pointing_csv(out / "pointing.csv", acq)
    per_sec = acq.per_second
    up = np.zeros(n_seconds + 1, dtype=bool)
    tx_sigma_deg = np.full(n_seconds + 1, np.nan)
    idx = per_sec["t"].astype(int)
    keep = (idx >= 0) & (idx <= n_seconds)
    up[idx[keep]] = per_sec["link_up"][keep]
    tx_sigma_deg[idx[keep]] = per_sec["tx_sigma_deg"][keep]
    up = up[:n_seconds]
    up_secs = np.flatnonzero(up)

    log.info("link budget")
    sample_sec = np.clip(np.floor(col["t"]).astype(int), 0, n_seconds)
    if config.pointing_sigma_deg is not None:
        sigma = np.full(len(samples), math.radians(config.pointing_sigma_deg))
    else:
        s_deg = tx_sigma_deg[sample_sec]
        sigma = np.where(np.isfinite(s_deg), np.radians(np.nan_to_num(s_deg)), config.link.pointing_sigma)
    theo = np.array([s.loss_db for s in link_series(samples, config.link, sigma)])
    sample_up = up[np.minimum(sample_sec, n_seconds - 1)]
    theo_mean = float(np.mean(theo[sample_up])) if sample_up.any() else float("nan")
    offset = config.extra_loss_db
    if config.pin_mean_loss_db is not None and sample_up.any():
        offset += config.pin_mean_loss_db - theo_mean
    applied = theo + offset
    bg = config.link.background_rate
    write_link_csv(out / "link.csv", [LinkSample(float(t), float(L), bg) for t, L in zip(col["t"], applied)])

    # Per-second transmittance held constant within each second.
    eta_sec = np.zeros(n_seconds)
    first = np.searchsorted(sample_sec, np.arange(n_seconds))
    first = np.minimum(first, len(samples) - 1)
    eta_sec[:] = 10.0 ** (-applied[first] / 10.0)
    eta_sec[~up] = 0.0
    if config.quantum_link == "off":
        eta_sec[:] = 0.0

    def eta_fn(t):
        return eta_sec[np.clip(np.floor(t).astype(int), 0, n_seconds - 1)]

    log.info("source and compensation")
    src = config.source
    table = generate_sequence(src, seed=config.seeds["sequence"])
    write_source_log(out / "source_log.bin", out / "source_log.json", table, src, config.seeds["sequence"],
                     n_seconds + 1)
    states_fn, src_qber = _compensate(config, up_secs)

    acquired = acq.acquired and len(up_secs) > 0
    rng = np.random.default_rng(config.seeds["events"])
    log.info("events")
    slots = sample_detections(table, src, eta_fn, 0.0, float(n_seconds), rng)
    tof_true = CubicSpline(col["t"], col["tof"])
    events = simulate_receiver(slots, table, src, tof_true, states_fn, config.analyzer, config.detector,
                               bg, (0.0, float(n_seconds)), config.clock, rng)
    write_timetags(out / "timetags.bin", out / "timetags.json", events, config.detector.tag_resolution)

    log.info("distill: %d detections", len(events))
    tof_gps = kin.gps_time_of_flight(samples, pc)
    epochs = np.zeros(n_seconds + 1, dtype=[("second", "<u4"), ("slot", "<u8")])
    epochs["second"] = np.arange(n_seconds + 1)
    epochs["slot"] = np.round(np.arange(n_seconds + 1) * src.clock_rate).astype(np.uint64)
    report = distill(events.tag, events.channel, config.detector.tag_resolution, table, src,
                     col["t"], tof_gps, config.distill, epochs=epochs)
    write_outputs(report, out)

    frame_counts = {fr.frame_index: fr.total_counts for fr in report.frames}
    counts_up = np.array([frame_counts.get(int(s), 0) for s in up_secs])
    meas = measured_loss_series(counts_up, bg, src, config.distill.frame_length)
    link_up_loss = applied[first[up_secs]] if len(up_secs) else np.zeros(0)
    finite = np.isfinite(meas) & (config.quantum_link != "off")
    measured = float(np.mean(meas[finite])) if finite.any() else float("nan")
    consistency = float(abs(measured - np.mean(link_up_loss[finite]))) if finite.any() else float("nan")

    sifted_all = sum(fr.sifted_signal + fr.sifted_decoy for fr in report.frames)
    errors_all = sum(fr.errors_signal + fr.errors_decoy for fr in report.frames)
    means = acq.tracking_means()
    if pc.kind is kin.PassKind.SATELLITE:
        speed = kin.orbital_speed(pc.orbit_altitude) * 3.6
    else:
        speed = pc.speed * 3.6
    status = report.status if acquired else "acquisition_failed"
    summary = PassSummary(
        pass_label=" ".join(x for x in (config.label or config.pass_id or "", config.start_time_utc or "") if x),
        classical_link_duration=float(pc.duration),
        quantum_link_duration=float(len(up_secs)) if config.quantum_link != "off" else 0.0,
        mean_speed=float(speed),
        max_angular_speed=float(kin.max_angular_speed(samples)),
        tx_pointing_error=_finite_or_none(means["tx_coarse"]),
        rx_pointing_error=_finite_or_none(means["rx_coarse"]),
        rx_fine_pointing_error=_finite_or_none(means["rx_fine"]),
        source_qber=_finite_or_none(np.mean([src_qber[int(s)] for s in up_secs]) if len(up_secs) else None, 100),
        signal_qber=_finite_or_none(report.qber_signal, 100),
        decoy_qber=_finite_or_none(report.qber_decoy, 100),
        theoretical_loss=_finite_or_none(theo_mean),
        measured_loss=_finite_or_none(measured),
        ec_efficiency=_finite_or_none(report.ec_efficiency),
        snr_threshold=float(config.distill.snr_threshold),
        sifted_key_length=int(report.sifted_total),
        secure_key_length=int(report.secure_length),
        pass_id=config.pass_id,
        status=status,
        finite_size=config.distill.finite_size,
        diagnostics=_plain({
            "time_to_lock": acq.time_to_lock,
            "acquisition_events": acq.events,
            "detections": len(events),
            "loss_offset_db": offset,
            "loss_consistency_db": consistency,
            "frame_qber_all": errors_all / sifted_all * 100 if sifted_all else None,
            "frames": report.n_frames,
            "frames_kept": report.n_frames_kept,
            "frames_correlated": report.n_frames_correlated,
            "ec_blocks": report.ec_blocks,
            "ec_blocks_verified": report.ec_blocks_verified,
            "correlation": report.correlation,
            "quantum_link": config.quantum_link,
        }),
    )
    (out / "summary.json").write_text(json.dumps(summary.as_dict(), indent=2, sort_keys=True) + "\n")
    if not acquired:
        code = EXIT_ACQUISITION_FAILED
    elif report.status == "key":
        code = EXIT_OK
    else:
        code = EXIT_NO_KEY
    log.info("done: %s", status)
    return RunResult(summary, code, out, report)


def load_summary(run_dir) -> PassSummary:
    path = Path(run_dir)
    if path.is_dir():
        path = path / "summary.json"
    return PassSummary.from_dict(json.loads(path.read_text()))


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) or (isinstance(v, float) and v.is_integer() and abs(v) >= 10):
        return f"{int(v)}"
    return f"{v:.4g}"


@dataclass
class SummaryTable:
    headers: list
    rows: list  # [label, unit, v1, v2, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.headers), len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", "unit", *self.headers])
        for label, unit, *vals in self.rows:
            w.writerow([label, unit, *("" if v is None else v for v in vals)])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [["Parameter", *self.headers]]
        for label, unit, *vals in self.rows:
            cells.append([f"{label} [{unit}]" if unit else label, *(_fmt(v) for v in vals)])
        widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                 for r in cells]
        lines.insert(1, "-" * len(lines[0]))
        return "\n".join(lines) + "\n"


def summarize(runs) -> SummaryTable:
    """One column per pass; ``runs`` are run directories or PassSummary objects."""
    summaries = [r if isinstance(r, PassSummary) else load_summary(r) for r in runs]
    if not summaries:
        raise ValueError("summarize needs at least one completed run")
    headers = []
    for i, s in enumerate(summaries):
        h = s.pass_id or s.pass_label or f"run{i + 1}"
        if h in headers:
            h = f"{h}#{sum(x.split('#')[0] == h for x in headers) + 1}"
        headers.append(h)
    rows = []
    for name, label, unit in SUMMARY_ROWS:
        rows.append([label, unit, *(getattr(s, name) for s in summaries)])
    return SummaryTable(headers, rows)


# --- reference comparison -------------------------------------------------

def load_reference() -> dict:
    path = resources.files("uplinkqkd") / "data" / "table1.json"
    return json.loads(path.read_text())


# metric -> (kind, tolerance); kinds: rel (fraction), abs, factor, exact, interval (abs margin)
TOLERANCES = {
    "classical_link_duration": ("rel", 0.20),
    "quantum_link_duration": ("rel", 0.20),
    "mean_speed": ("rel", 0.10),
    "max_angular_speed": ("rel", 0.10),
    "tx_pointing_error": ("factor", 2.0),
    "rx_pointing_error": ("factor", 2.0),
    "rx_fine_pointing_error": ("factor", 2.0),
    "source_qber": ("abs", 1.0),
    "signal_qber": ("abs", 1.0),
    "decoy_qber": ("abs", 3.0),
    "theoretical_loss": ("abs", 4.0),
    "measured_loss": ("abs", 1.0),
    "ec_efficiency": ("abs", 0.3),
    "snr_threshold": ("exact", 0.0),
    "sifted_key_length": ("factor", 2.0),
    "secure_key_length": ("factor", 3.0),
}


@dataclass
class MetricComparison:
    metric: str
    simulated: object
    reference: object
    kind: str
    tolerance: float
    deviation: float | None
    status: str  # "pass", "fail" or "not compared"
    note: str = ""


@dataclass
class ComparisonReport:
    pass_id: str
    entries: list

    @property
    def passed(self) -> bool:
        return all(e.status != "fail" for e in self.entries)

    def entry(self, metric: str) -> MetricComparison:
        for e in self.entries:
            if e.metric == metric:
                return e
        raise KeyError(metric)

    def as_dict(self) -> dict:
        return _plain({"pass_id": self.pass_id, "passed": self.passed, "entries": [asdict(e) for e in self.entries]})

    def to_text(self) -> str:
        lines = [f"{self.pass_id}: {'PASS' if self.passed else 'FAIL'}"]
        for e in self.entries:
            dev = "-" if e.deviation is None else f"{e.deviation:.4g}"
            lines.append(f"  {e.metric:26s} sim={_fmt(e.simulated):>10s} ref={_fmt(e.reference) if not isinstance(e.reference, list) else str(e.reference):>12s} "
                         f"{e.kind}={dev:>8s} tol={e.tolerance:g}  {e.status}{'  (' + e.note + ')' if e.note else ''}")
        return "\n".join(lines) + "\n"


def _compare_one(metric, sim, ref, kind, tol):
    if kind == "rel":
        dev = abs(sim - ref) / abs(ref)
        return dev, dev <= tol
    if kind == "abs":
        dev = abs(sim - ref)
        return dev, dev <= tol
    if kind == "factor":
        if sim <= 0 or ref <= 0:
            return None, False
        dev = max(sim / ref, ref / sim)
        return dev, dev <= tol
    if kind == "exact":
        dev = abs(sim - ref)
        return dev, dev == 0
    raise ValueError(kind)


def compare_to_reference(summary: PassSummary, reference: dict | None = None,
                         pass_id: str | None = None) -> ComparisonReport:
    """Per-metric deviation of a run summary from its reference pass."""
    reference = reference if reference is not None else load_reference()
    pid = pass_id or summary.pass_id
    passes = reference.get("passes", reference)
    if pid not in passes:
        raise KeyError(f"unknown pass id {pid!r}; known: {', '.join(sorted(passes))}")
    ref = passes[pid]
    entries = []
    for name, _, _ in SUMMARY_ROWS:
        if name not in TOLERANCES:
            continue
        kind, tol = TOLERANCES[name]
        sim = getattr(summary, name, None)
        r = ref.get(name, "missing")
        if r == "missing":
            entries.append(MetricComparison(name, sim, None, kind, tol, None, "not compared", "no reference value"))
            continue
        if name == "secure_key_length" and r is None:
            ok = sim == 0
            entries.append(MetricComparison(name, sim, r, "exact", 0.0, None if sim is None else float(sim),
                                            "pass" if ok else "fail", "reference produced no key"))
            continue
        if r is None:
            entries.append(MetricComparison(name, sim, r, kind, tol, None, "not compared", "no reference data"))
            continue
        if sim is None:
            entries.append(MetricComparison(name, sim, r, kind, tol, None, "not compared", "missing in summary"))
            continue
        if name == "secure_key_length" and ref.get("secure_key_length_asymptotic") and summary.finite_size:
            entries.append(MetricComparison(name, sim, r, kind, tol, None, "not compared",
                                            "reference is asymptotic, run is finite-size"))
            continue
        if isinstance(r, list):
            lo, hi = float(r[0]), float(r[1])
            if lo <= sim <= hi:
                dev = 0.0
            else:
                dev = min(abs(sim - lo), abs(sim - hi))
                if kind == "rel":
                    dev /= abs(lo if sim < lo else hi)
            ok = dev <= tol if kind in ("rel", "abs") else lo / tol <= sim <= hi * tol
            entries.append(MetricComparison(name, sim, r, kind, tol, dev, "pass" if ok else "fail", "range"))
            continue
        dev, ok = _compare_one(name, float(sim), float(r), kind, tol)
        entries.append(MetricComparison(name, sim, r, kind, tol, dev, "pass" if ok else "fail"))
    return ComparisonReport(pid, entries)
