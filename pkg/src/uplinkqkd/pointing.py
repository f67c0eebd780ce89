"""Two-site acquisition, coarse tracking and fine pointing.

Angles are small 2-D deviations in degrees, ``(x, y)`` in each site's local
tangent frame.  A site's motor axis ``m`` tracks a target direction
``theta``; the camera sees the spot at ``theta - m`` plus noise whenever the
other site's beacon reaches it.  The receiver rides on the aircraft, so its
target also carries an attitude random walk.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

FRAME_RATE = 50.0
FINE_RATE = 1000.0
POINTING_CSV_HEADER = ("t", "site", "state", "dev_x_deg", "dev_y_deg", "fine_dev_deg", "cmd_az", "cmd_el")


class PointingState(str, Enum):
    IDLE = "idle"
    SEARCHING = "searching"
    ACQUIRING = "acquiring"
    TRACKING = "tracking"
    COASTING = "coasting"


class PointingEvent(str, Enum):
    POSITION_DATA_RECEIVED = "position_data_received"
    SPOT_FOUND = "spot_found"
    SPOT_LOST = "spot_lost"
    TIMEOUT = "timeout"
    LOCKED = "locked"  # internal: deviation under threshold for enough frames


_TRANSITIONS = {
    (PointingState.IDLE, PointingEvent.POSITION_DATA_RECEIVED): PointingState.SEARCHING,
    (PointingState.SEARCHING, PointingEvent.SPOT_FOUND): PointingState.ACQUIRING,
    (PointingState.ACQUIRING, PointingEvent.LOCKED): PointingState.TRACKING,
    (PointingState.ACQUIRING, PointingEvent.SPOT_LOST): PointingState.SEARCHING,
    (PointingState.TRACKING, PointingEvent.SPOT_LOST): PointingState.COASTING,
    (PointingState.COASTING, PointingEvent.SPOT_FOUND): PointingState.TRACKING,
    (PointingState.COASTING, PointingEvent.TIMEOUT): PointingState.SEARCHING,
}


def state_transition(state: PointingState, event: PointingEvent) -> PointingState:
    """Next state; undefined (state, event) pairs leave the state unchanged."""
    return _TRANSITIONS.get((PointingState(state), PointingEvent(event)), PointingState(state))


@dataclass(frozen=True)
class ControllerGains:
    k_v: float = 1.0  # feed-forward on estimated spot velocity
    k_p: float = 2.5  # 1/s
    k_i: float = 1.5  # 1/s^2, near critical damping with k_p
    rate_limit: float = 10.0  # deg/s
    integrator_clamp: float = 0.5  # deg s
    velocity_window: int = 25  # frames

    def __post_init__(self):
        if min(self.k_v, self.k_p, self.k_i, self.integrator_clamp) < 0:
            raise ValueError("gains must be non-negative")
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive")
        if self.velocity_window < 2:
            raise ValueError("velocity_window must be at least 2 frames")


@dataclass(frozen=True)
class CameraFrame:
    t: float
    spot: tuple | None  # (x, y) deg, None when no spot is seen
    snr: float = 0.0


@dataclass(frozen=True)
class BeaconGeometry:
    beacon_divergence_half_angle: float = 0.37
    irl_divergence_half_angle: float = 40.0
    inm_attitude_sigma: float = 1.25
    camera_fov_half_angle: float = 2.0

    def __post_init__(self):
        if self.irl_divergence_half_angle <= self.beacon_divergence_half_angle:
            raise ValueError("the wide-angle lamp must exceed the beacon divergence")


def beacon_visible(tx_pointing_error: float, rx_offset_angle: float, geometry: BeaconGeometry = BeaconGeometry(),
                   irl_on: bool = False) -> bool:
    """Whether the observer sees the emitter's beacon as a spot.

    ``tx_pointing_error`` is how far the emitter points off the observer;
    ``rx_offset_angle`` is how far the emitter lies off the observer's axis.
    """
    if tx_pointing_error < 0 or rx_offset_angle < 0:
        raise ValueError("angles must be non-negative")
    cone = geometry.irl_divergence_half_angle if irl_on else geometry.beacon_divergence_half_angle
    return tx_pointing_error < cone and rx_offset_angle < geometry.camera_fov_half_angle


class CoarseLoop:
    """Camera-feedback motor rate controller for one site."""

    def __init__(self, gains: ControllerGains = ControllerGains()):
        self.gains = gains
        self.reset()

    def reset(self):
        self.integral = np.zeros(2)
        self.history: deque = deque(maxlen=self.gains.velocity_window)
        self.last_cmd = np.zeros(2)

    def velocity_estimate(self, dt: float) -> np.ndarray:
        """Spot velocity in motor coordinates: change in deviation plus commanded motion."""
        if len(self.history) < 2:
            return np.zeros(2)
        devs = np.array([h[0] for h in self.history])
        cmds = np.array([h[1] for h in self.history])
        span = (len(devs) - 1) * dt
        return (devs[-1] - devs[0]) / span + cmds[:-1].mean(axis=0)

    def step(self, deviation, dt: float) -> np.ndarray:
        g = self.gains
        dev = np.asarray(deviation, dtype=float)
        self.history.append((dev, self.last_cmd.copy()))
        self.integral = np.clip(self.integral + dev * dt, -g.integrator_clamp, g.integrator_clamp)
        cmd = g.k_v * self.velocity_estimate(dt) + g.k_p * dev + g.k_i * self.integral
        speed = float(np.hypot(*cmd))
        if speed > g.rate_limit:
            cmd = cmd * (g.rate_limit / speed)
        self.last_cmd = cmd
        return cmd


def step_coarse(loop: CoarseLoop, frame: CameraFrame, gains: ControllerGains | None = None,
                dt: float = 1.0 / FRAME_RATE) -> np.ndarray:
    """Motor rate command (az, el) in deg/s for one camera frame.

    Without a spot the previous command is held (coasting behaviour).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if gains is not None and gains is not loop.gains:
        loop.gains = gains
    if frame.spot is None:
        return loop.last_cmd.copy()
    return loop.step(frame.spot, dt)


@dataclass(frozen=True)
class QuadCellConfig:
    spot_sigma: float = 0.05  # deg, Gaussian spot radius on the cell
    fov_half_angle: float = 0.3
    noise_sigma: float = 1e-3  # per quadrant, in units of full beacon power


def quadcell_reading(spot_offset, total_power: float, noise_sigma: float, rng: np.random.Generator | None = None,
                     spot_sigma: float = QuadCellConfig.spot_sigma, fov_half_angle: float = QuadCellConfig.fov_half_angle,
                     ) -> np.ndarray:
    """Quadrant intensities (+x+y, -x+y, -x-y, +x-y) for a Gaussian spot."""
    x, y = float(spot_offset[0]), float(spot_offset[1])
    if max(abs(x), abs(y)) > fov_half_angle:
        total_power = 0.0
    fx = 0.5 * (1.0 + math.erf(x / (math.sqrt(2.0) * spot_sigma)))
    fy = 0.5 * (1.0 + math.erf(y / (math.sqrt(2.0) * spot_sigma)))
    q = total_power * np.array([fx * fy, (1 - fx) * fy, (1 - fx) * (1 - fy), fx * (1 - fy)])
    if noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng()
        q = q + rng.normal(0.0, noise_sigma, 4)
    return q


def quadcell_error(reading) -> np.ndarray:
    """Normalised differences ((right - left)/sum, (top - bottom)/sum)."""
    q = np.asarray(reading, dtype=float)
    s = q.sum()
    if s == 0:
        return np.zeros(2)
    return np.array([(q[0] + q[3] - q[1] - q[2]) / s, (q[0] + q[1] - q[2] - q[3]) / s])


def step_fine(reading, fsm_state, loop_gain: float, dt: float = 1.0 / FINE_RATE,
              spot_sigma: float = QuadCellConfig.spot_sigma, clamp: float = QuadCellConfig.fov_half_angle,
              ) -> np.ndarray:
    """Integrate the quad-cell error into the fast-steering-mirror angle.

    The normalised error is converted to degrees with the small-offset slope
    of a Gaussian spot, so ``loop_gain`` is the loop bandwidth in 1/s.
    """
    err = np.clip(quadcell_error(reading), -1.0, 1.0) * spot_sigma * math.sqrt(math.pi / 2.0)
    return np.clip(np.asarray(fsm_state, dtype=float) + loop_gain * dt * err, -clamp, clamp)


@dataclass(frozen=True)
class AcquisitionConfig:
    rx_gains: ControllerGains = ControllerGains()
    tx_gains: ControllerGains = ControllerGains()
    geometry: BeaconGeometry = BeaconGeometry()
    quadcell: QuadCellConfig = QuadCellConfig()
    frame_rate: float = FRAME_RATE
    fine_rate: float = FINE_RATE
    fine_gain: float = 200.0  # 1/s
    attitude_step_sigma: float = 0.02  # deg per sqrt(frame), per axis
    camera_noise_rx: float = 0.01  # deg
    camera_noise_tx: float = 0.002  # deg
    tx_initial_sigma: float = 0.05  # deg, GPS-guided pointing error per axis
    lock_threshold: float = 0.15  # deg
    lock_frames: int = 10
    coast_timeout: float = 2.0  # s
    search_speed: float = 0.5  # deg/s
    search_pitch: float = 0.35  # deg
    irl: bool = True
    position_time: float = 0.0  # s, when position data is first exchanged
    dropouts: tuple = ()  # ((t0, t1), ...) beacon blocked for both sites
    seed: int = 0

    def __post_init__(self):
        if self.fine_rate % self.frame_rate:
            raise ValueError("fine_rate must be a multiple of frame_rate")
        if self.lock_frames < 1 or self.coast_timeout <= 0:
            raise ValueError("lock_frames and coast_timeout must be positive")


@dataclass
class AcquisitionResult:
    t: np.ndarray  # frame times
    rx_state: list
    tx_state: list
    rx_dev: np.ndarray  # (N, 2) true coarse deviation, deg
    tx_dev: np.ndarray
    rx_fine: np.ndarray  # (N,) radial fine residual, deg (nan when the fine loop is idle)
    rx_cmd: np.ndarray
    tx_cmd: np.ndarray
    events: dict  # t1..t4
    time_to_lock: float | None
    per_second: dict = field(default_factory=dict)

    @property
    def acquired(self) -> bool:
        return self.time_to_lock is not None

    def link_up(self) -> np.ndarray:
        """Frames where both sites are tracking."""
        return np.array([(a == PointingState.TRACKING and b == PointingState.TRACKING)
                         for a, b in zip(self.rx_state, self.tx_state)])

    def tracking_means(self) -> dict:
        """Mean radial errors over frames with the link up."""
        up = self.link_up()
        if not up.any():
            return {"tx_coarse": float("nan"), "rx_coarse": float("nan"), "rx_fine": float("nan")}
        fine = self.rx_fine[up]
        return {
            "tx_coarse": float(np.mean(np.hypot(*self.tx_dev[up].T))),
            "rx_coarse": float(np.mean(np.hypot(*self.rx_dev[up].T))),
            "rx_fine": float(np.nanmean(fine)) if np.isfinite(fine).any() else float("nan"),
        }


def _spiral(elapsed: float, speed: float, pitch: float) -> np.ndarray:
    """Archimedean spiral offset after travelling ``speed * elapsed`` along it."""
    b = pitch / (2.0 * math.pi)
    s = speed * max(elapsed, 0.0)
    phi = math.sqrt(2.0 * s / b) if s > 0 else 0.0
    r = b * phi
    return np.array([r * math.cos(phi), r * math.sin(phi)])


def los_track(traj_t, az_deg, el_deg, t) -> np.ndarray:
    """Line-of-sight direction as small-angle (x, y) deg, relative to the first sample."""
    az = np.unwrap(np.radians(az_deg))
    el = np.radians(el_deg)
    x = np.degrees((az - az[0]) * np.cos(el))
    y = np.degrees(el - el[0])
    return np.stack([np.interp(t, traj_t, x), np.interp(t, traj_t, y)], axis=-1)


class _Site:
    def __init__(self, name, gains, cam_noise):
        self.name = name
        self.loop = CoarseLoop(gains)
        self.state = PointingState.IDLE
        self.cam_noise = cam_noise
        self.motor = np.zeros(2)
        self.rate = np.zeros(2)
        self.lock_count = 0
        self.lost_since = None
        self.search_start = 0.0
        self.bias = np.zeros(2)  # open-loop pointing error of the position-data prediction

    def fire(self, event):
        new = state_transition(self.state, event)
        if new != self.state:
            if new is PointingState.ACQUIRING:
                self.loop.reset()
                self.lock_count = 0
            if new is PointingState.SEARCHING:
                self.loop.reset()
            if new is PointingState.COASTING:
                self.lost_since = None
            self.state = new
        return new


def simulate_acquisition(traj_t, az_deg, el_deg, config: AcquisitionConfig = AcquisitionConfig(),
                         duration: float | None = None) -> AcquisitionResult:
    """Closed-loop two-site run over the trajectory.

    Event times: t1 position data (classical link), t2 receiver identifies
    the beacon spot, t3 receiver locks, t4 both sites tracking (first
    counts).  ``time_to_lock = t4 - t1`` or ``None`` if the link never forms.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    geom = cfg.geometry
    traj_t = np.asarray(traj_t, dtype=float)
    t_end = traj_t[-1] if duration is None else min(traj_t[-1], traj_t[0] + duration)
    sub = int(round(cfg.fine_rate / cfg.frame_rate))
    dt_f = 1.0 / cfg.frame_rate
    dt_s = 1.0 / cfg.fine_rate
    n_frames = int(math.floor((t_end - traj_t[0]) * cfg.frame_rate)) + 1
    ft = traj_t[0] + np.arange(n_frames) * dt_f
    # Target directions at 1 kHz.
    fine_t = traj_t[0] + np.arange(n_frames * sub) * dt_s
    los = los_track(traj_t, az_deg, el_deg, fine_t)
    att_steps = rng.normal(0.0, cfg.attitude_step_sigma / math.sqrt(sub), size=(len(fine_t), 2))
    attitude = np.cumsum(att_steps, axis=0)
    theta_rx = los + attitude
    theta_tx = los

    rx = _Site("rx", cfg.rx_gains, cfg.camera_noise_rx)
    tx = _Site("tx", cfg.tx_gains, cfg.camera_noise_tx)
    rx.bias = rng.normal(0.0, geom.inm_attitude_sigma, 2)
    tx.bias = rng.normal(0.0, cfg.tx_initial_sigma, 2)
    fsm = np.zeros(2)
    irl_on = False
    events = {"t1": None, "t2": None, "t3": None, "t4": None}

    rx_state, tx_state = [], []
    rx_dev = np.zeros((n_frames, 2))
    tx_dev = np.zeros((n_frames, 2))
    rx_fine = np.full(n_frames, np.nan)
    rx_cmd = np.zeros((n_frames, 2))
    tx_cmd = np.zeros((n_frames, 2))
    dropouts = [tuple(d) for d in cfg.dropouts]
    qc = cfg.quadcell

    def blocked(t):
        return any(a <= t < b for a, b in dropouts)

    def nominal(site, theta, t):
        return theta + site.bias + _spiral(t - site.search_start, cfg.search_speed, cfg.search_pitch)

    for k in range(n_frames):
        t = ft[k]
        i0 = k * sub
        if t >= cfg.position_time and rx.state is PointingState.IDLE:
            for s, th in ((rx, theta_rx), (tx, theta_tx)):
                s.fire(PointingEvent.POSITION_DATA_RECEIVED)
                s.search_start = t
                s.motor = nominal(s, th[i0], t)
            irl_on = cfg.irl
            events["t1"] = t
        # Camera frame for each site.
        d_rx = theta_rx[i0] - rx.motor
        d_tx = theta_tx[i0] - tx.motor
        e_rx, e_tx = float(np.hypot(*d_rx)), float(np.hypot(*d_tx))
        dark = blocked(t)
        active = rx.state is not PointingState.IDLE
        sees_rx = active and not dark and beacon_visible(e_tx, e_rx, geom)
        sees_tx = active and not dark and beacon_visible(e_rx, e_tx, geom, irl_on=irl_on)
        for site, sees, dev, name in ((rx, sees_rx, d_rx, "rx"), (tx, sees_tx, d_tx, "tx")):
            if site.state is PointingState.IDLE:
                site.rate = np.zeros(2)
                continue
            if sees:
                meas = dev + rng.normal(0.0, site.cam_noise, 2)
                if site.state is PointingState.SEARCHING:
                    site.fire(PointingEvent.SPOT_FOUND)
                    if name == "rx" and events["t2"] is None:
                        events["t2"] = t
                elif site.state is PointingState.COASTING:
                    site.fire(PointingEvent.SPOT_FOUND)
                site.rate = site.loop.step(meas, dt_f)
                if site.state is PointingState.ACQUIRING:
                    site.lock_count = site.lock_count + 1 if np.hypot(*meas) < cfg.lock_threshold else 0
                    if site.lock_count >= cfg.lock_frames:
                        site.fire(PointingEvent.LOCKED)
                        if name == "rx":
                            if events["t3"] is None:
                                events["t3"] = t
                            irl_on = False
                site.lost_since = None
            else:
                if site.state in (PointingState.TRACKING, PointingState.ACQUIRING):
                    site.fire(PointingEvent.SPOT_LOST)
                    if site.state is PointingState.SEARCHING:
                        site.search_start = t
                if site.state is PointingState.COASTING:
                    if site.lost_since is None:
                        site.lost_since = t
                    elif t - site.lost_since >= cfg.coast_timeout - 1e-9:
                        site.fire(PointingEvent.TIMEOUT)
                        site.search_start = t
                    site.rate = site.loop.last_cmd.copy()
                if site.state is PointingState.SEARCHING:
                    site.rate = None  # slews along the search pattern
        if (events["t4"] is None and rx.state is PointingState.TRACKING
                and tx.state is PointingState.TRACKING):
            events["t4"] = t

        rx_state.append(rx.state)
        tx_state.append(tx.state)
        rx_dev[k], tx_dev[k] = d_rx, d_tx
        rx_cmd[k] = rx.rate if rx.rate is not None else 0.0
        tx_cmd[k] = tx.rate if tx.rate is not None else 0.0

        # Advance motors and the fine loop at the fine rate until the next frame.
        fine_on = rx.state is PointingState.TRACKING
        power = 1.0 if (sees_rx and fine_on) else 0.0
        if not fine_on:
            fsm[:] = 0.0
        fine_err = []
        for j in range(sub):
            i = i0 + j
            for site, th in ((rx, theta_rx), (tx, theta_tx)):
                if site.state is PointingState.SEARCHING:
                    site.motor = nominal(site, th[min(i + 1, len(th) - 1)], t + (j + 1) * dt_s)
                elif site.rate is not None:
                    site.motor = site.motor + site.rate * dt_s
            if fine_on:
                off = theta_rx[i] - rx.motor - fsm
                reading = quadcell_reading(off, power, qc.noise_sigma, rng, qc.spot_sigma, qc.fov_half_angle)
                fsm = step_fine(reading, fsm, cfg.fine_gain, dt_s, qc.spot_sigma, qc.fov_half_angle)
                fine_err.append(math.hypot(*(theta_rx[i] - rx.motor - fsm)))
        if fine_err:
            rx_fine[k] = float(np.mean(fine_err))

    t1, t4 = events["t1"], events["t4"]
    result = AcquisitionResult(
        t=ft, rx_state=rx_state, tx_state=tx_state, rx_dev=rx_dev, tx_dev=tx_dev, rx_fine=rx_fine,
        rx_cmd=rx_cmd, tx_cmd=tx_cmd, events=events,
        time_to_lock=(t4 - t1) if (t4 is not None and t1 is not None) else None,
    )
    result.per_second = per_second_summary(result)
    return result


def per_second_summary(result: AcquisitionResult) -> dict:
    """Per-second link flag and transmitter pointing sigma (per axis, deg)."""
    sec = np.floor(result.t).astype(np.int64)
    up = result.link_up()
    secs = np.unique(sec)
    link, sigma, frac = [], [], []
    for s in secs:
        m = sec == s
        u = m & up
        frac.append(u.sum() / m.sum())
        link.append(u.sum() / m.sum() >= 0.5)
        if u.any():
            sigma.append(float(np.sqrt(np.mean(result.tx_dev[u] ** 2))))
        else:
            sigma.append(float("nan"))
    return {"t": secs.astype(float), "link_up": np.array(link), "up_fraction": np.array(frac),
            "tx_sigma_deg": np.array(sigma)}


def write_pointing_csv(path, result: AcquisitionResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POINTING_CSV_HEADER)
        for k, t in enumerate(result.t):
            fine = result.rx_fine[k]
            w.writerow([f"{t:.3f}", "rx", result.rx_state[k].value, f"{result.rx_dev[k, 0]:.6f}",
                        f"{result.rx_dev[k, 1]:.6f}", "" if not np.isfinite(fine) else f"{fine:.6f}",
                        f"{result.rx_cmd[k, 0]:.6f}", f"{result.rx_cmd[k, 1]:.6f}"])
            w.writerow([f"{t:.3f}", "tx", result.tx_state[k].value, f"{result.tx_dev[k, 0]:.6f}",
                        f"{result.tx_dev[k, 1]:.6f}", "", f"{result.tx_cmd[k, 0]:.6f}",
                        f"{result.tx_cmd[k, 1]:.6f}"])
