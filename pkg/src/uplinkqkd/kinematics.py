"""Pass geometry for a fixed ground transmitter and a moving receiver.

Aircraft passes (arc, line) use a flat-Earth tangent plane at the ground
station; satellite passes use a spherical Earth with a circular orbit.
Rates are evaluated analytically from position and velocity, so a sample at
closest approach carries the exact peak line-of-sight rate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s
GM_EARTH = 3.986004418e14  # m^3/s^2
EARTH_RADIUS = 6_371_000.0  # m
DEFAULT_AIRCRAFT_ALTITUDE = 1600.0  # m ASL
DEFAULT_GROUND_ALTITUDE = 128.0  # m ASL

TRAJECTORY_CSV_HEADER = (
    "t", "lat", "lon", "alt", "range_m", "az_deg", "el_deg",
    "az_rate", "el_rate", "ang_speed", "tof_s",
)


class PassKind(str, Enum):
    ARC = "arc"
    LINE = "line"
    SATELLITE = "satellite"


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float
    altitude: float

    def __post_init__(self):
        if abs(self.latitude) > 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if abs(self.longitude) > 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")
        if self.altitude < -500.0:
            raise ValueError(f"altitude below -500 m: {self.altitude}")


# Smiths Falls-Montague airport, approximately.
DEFAULT_STATION = GeoPoint(44.9458, -76.0600, DEFAULT_GROUND_ALTITUDE)


@dataclass(frozen=True)
class PassConfig:
    """Pass parameters.

    ``nominal_distance`` is the slant range: the arc radius for arcs, the
    closest-approach distance for lines.  ``start_bearing`` is the azimuth of
    the platform at t=0 for aircraft and the rise azimuth for satellites.
    ``direction`` is +1 for clockwise (as seen from above), -1 otherwise.
    """

    kind: PassKind
    nominal_distance: float = 5000.0
    duration: float = 200.0
    platform_altitude: float = DEFAULT_AIRCRAFT_ALTITUDE
    ground_altitude: float = DEFAULT_GROUND_ALTITUDE
    speed: float = 200.0 / 3.6
    orbit_altitude: float = 600e3
    max_elevation: float = 90.0
    start_bearing: float = 0.0
    sample_interval: float = 1.0
    direction: int = 1
    gps_noise_sigma: float = 3.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", PassKind(self.kind))
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.sample_interval <= 0:
            raise ValueError("sample_interval must be positive")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.gps_noise_sigma < 0:
            raise ValueError("gps_noise_sigma must be non-negative")
        if self.kind is PassKind.SATELLITE:
            if self.orbit_altitude <= 0:
                raise ValueError("orbit_altitude must be positive")
            if not 0.0 < self.max_elevation <= 90.0:
                raise ValueError("max_elevation must be in (0, 90]")
        else:
            if self.nominal_distance <= 0:
                raise ValueError("nominal_distance must be positive")
            if self.speed < 0:
                raise ValueError("speed must be non-negative")
            if self.nominal_distance <= abs(self.height_difference):
                raise ValueError("slant distance must exceed the altitude difference")

    @property
    def height_difference(self) -> float:
        return self.platform_altitude - self.ground_altitude


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    position: GeoPoint
    range: float
    azimuth: float
    elevation: float
    az_rate: float
    el_rate: float
    angular_speed: float
    tof: float

    def csv_row(self) -> list:
        p = self.position
        return [
            f"{self.t:.6f}", f"{p.latitude:.8f}", f"{p.longitude:.8f}", f"{p.altitude:.3f}",
            f"{self.range:.4f}", f"{self.azimuth:.6f}", f"{self.elevation:.6f}",
            f"{self.az_rate:.8f}", f"{self.el_rate:.8f}", f"{self.angular_speed:.8f}",
            f"{self.tof:.12e}",
        ]


def time_of_flight(range_m):
    """Photon time of flight over ``range_m`` metres (scalar or array)."""
    r = np.asarray(range_m, dtype=float)
    if np.any(r < 0):
        raise ValueError("range must be non-negative")
    out = r / SPEED_OF_LIGHT
    return float(out) if out.ndim == 0 else out


def orbital_speed(orbit_altitude: float) -> float:
    return math.sqrt(GM_EARTH / (EARTH_RADIUS + orbit_altitude))


def angular_rates(prev: TrajectorySample, nxt: TrajectorySample) -> tuple[float, float, float]:
    """Finite-difference (az_rate, el_rate, angular_speed) in deg/s between two samples."""
    dt = nxt.t - prev.t
    if dt <= 0:
        raise ValueError("samples must have strictly increasing timestamps")
    daz = (nxt.azimuth - prev.azimuth + 180.0) % 360.0 - 180.0
    az_rate = daz / dt
    el_rate = (nxt.elevation - prev.elevation) / dt
    mid_el = math.radians(0.5 * (prev.elevation + nxt.elevation))
    return az_rate, el_rate, math.hypot(az_rate * math.cos(mid_el), el_rate)


@dataclass
class _Kinematic:
    """Local east/north/up position and velocity relative to the station."""

    t: np.ndarray
    pos: np.ndarray  # (N, 3)
    vel: np.ndarray  # (N, 3)
    centre_frame: np.ndarray | None = field(default=None)  # (N, 3) Earth-centred, station axes


def _horizontal(bearing_rad):
    return np.stack([np.sin(bearing_rad), np.cos(bearing_rad), np.zeros_like(bearing_rad)], axis=-1)


def _arc(cfg: PassConfig, t: np.ndarray) -> _Kinematic:
    dh = cfg.height_difference
    rho = math.sqrt(cfg.nominal_distance**2 - dh**2)
    omega = cfg.direction * cfg.speed / rho
    phi = math.radians(cfg.start_bearing) + omega * t
    pos = rho * _horizontal(phi)
    pos[:, 2] = dh
    vel = rho * omega * np.stack([np.cos(phi), -np.sin(phi), np.zeros_like(phi)], axis=-1)
    return _Kinematic(t, pos, vel)


def _line(cfg: PassConfig, t: np.ndarray) -> _Kinematic:
    dh = cfg.height_difference
    rho = math.sqrt(cfg.nominal_distance**2 - dh**2)
    half = 0.5 * cfg.speed * cfg.duration
    closest = math.radians(cfg.start_bearing) + cfg.direction * math.atan2(half, rho)
    heading = closest + cfg.direction * math.pi / 2
    u_c = _horizontal(np.array(closest))
    u_h = _horizontal(np.array(heading))
    s = cfg.speed * (t - 0.5 * cfg.duration)
    pos = rho * u_c[None, :] + s[:, None] * u_h[None, :]
    pos[:, 2] = dh
    vel = np.repeat((cfg.speed * u_h)[None, :], len(t), axis=0)
    return _Kinematic(t, pos, vel)


def _satellite(cfg: PassConfig, t: np.ndarray) -> _Kinematic:
    r_orbit = EARTH_RADIUS + cfg.orbit_altitude
    r_station = EARTH_RADIUS + cfg.ground_altitude
    el_max = math.radians(cfg.max_elevation)
    # Earth-central angle between station and orbit plane giving el_max at culmination.
    psi = math.acos(min(1.0, r_station * math.cos(el_max) / r_orbit)) - el_max
    psi = max(psi, 0.0)
    omega = orbital_speed(cfg.orbit_altitude) / r_orbit
    heading = math.radians(cfg.start_bearing) + math.pi
    u_h = _horizontal(np.array(heading))
    u_c = _horizontal(np.array(heading + cfg.direction * math.pi / 2))
    z = np.array([0.0, 0.0, 1.0])
    a = math.cos(psi) * z + math.sin(psi) * u_c
    theta = omega * (t - 0.5 * cfg.duration)
    centre = r_orbit * (np.cos(theta)[:, None] * a + np.sin(theta)[:, None] * u_h)
    vel = r_orbit * omega * (-np.sin(theta)[:, None] * a + np.cos(theta)[:, None] * u_h)
    pos = centre - r_station * z
    return _Kinematic(t, pos, vel, centre_frame=centre)


def _look_angles(pos: np.ndarray, vel: np.ndarray):
    e, n, u = pos.T
    ve, vn, vu = vel.T
    horiz2 = e**2 + n**2
    horiz = np.sqrt(horiz2)
    rng = np.sqrt(horiz2 + u**2)
    az = np.degrees(np.arctan2(e, n)) % 360.0
    el = np.degrees(np.arctan2(u, horiz))
    los = pos / rng[:, None]
    v_perp = vel - np.sum(vel * los, axis=1)[:, None] * los
    ang_speed = np.degrees(np.linalg.norm(v_perp, axis=1) / rng)
    singular = horiz < 1e-9 * rng
    safe_h2 = np.where(singular, 1.0, horiz2)
    safe_h = np.where(singular, 1.0, horiz)
    az_rate = np.degrees((n * ve - e * vn) / safe_h2)
    el_rate = np.degrees((vu * horiz2 - u * (e * ve + n * vn)) / (rng**2 * safe_h))
    # Azimuth is undefined at the zenith; the whole rate is carried by elevation there.
    az_rate = np.where(singular, 0.0, az_rate)
    el_rate = np.where(singular, ang_speed, el_rate)
    return rng, az, el, az_rate, el_rate, ang_speed


def _rotation_local_to_ecef(station: GeoPoint) -> np.ndarray:
    lat, lon = math.radians(station.latitude), math.radians(station.longitude)
    east = [-math.sin(lon), math.cos(lon), 0.0]
    north = [-math.sin(lat) * math.cos(lon), -math.sin(lat) * math.sin(lon), math.cos(lat)]
    up = [math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)]
    return np.array([east, north, up]).T


def local_to_geodetic(pos: np.ndarray, station: GeoPoint, spherical: bool) -> np.ndarray:
    """Convert station-relative ENU offsets (N, 3) to (lat, lon, alt) rows."""
    pos = np.atleast_2d(pos)
    if not spherical:
        lat = station.latitude + np.degrees(pos[:, 1] / EARTH_RADIUS)
        lon = station.longitude + np.degrees(
            pos[:, 0] / (EARTH_RADIUS * math.cos(math.radians(station.latitude))))
        alt = station.altitude + pos[:, 2]
        return np.column_stack([lat, lon, alt])
    rot = _rotation_local_to_ecef(station)
    centre_local = pos + np.array([0.0, 0.0, EARTH_RADIUS + station.altitude])
    ecef = centre_local @ rot.T
    r = np.linalg.norm(ecef, axis=1)
    lat = np.degrees(np.arcsin(ecef[:, 2] / r))
    lon = np.degrees(np.arctan2(ecef[:, 1], ecef[:, 0]))
    return np.column_stack([lat, lon, r - EARTH_RADIUS])


def geodetic_to_local(points: Iterable[GeoPoint], station: GeoPoint, spherical: bool) -> np.ndarray:
    """Inverse of :func:`local_to_geodetic`."""
    arr = np.array([[p.latitude, p.longitude, p.altitude] for p in points], dtype=float)
    if not spherical:
        n = np.radians(arr[:, 0] - station.latitude) * EARTH_RADIUS
        e = np.radians(arr[:, 1] - station.longitude) * EARTH_RADIUS * math.cos(
            math.radians(station.latitude))
        return np.column_stack([e, n, arr[:, 2] - station.altitude])
    lat, lon = np.radians(arr[:, 0]), np.radians(arr[:, 1])
    r = EARTH_RADIUS + arr[:, 2]
    ecef = np.column_stack([r * np.cos(lat) * np.cos(lon), r * np.cos(lat) * np.sin(lon), r * np.sin(lat)])
    rot = _rotation_local_to_ecef(station)
    return ecef @ rot - np.array([0.0, 0.0, EARTH_RADIUS + station.altitude])


def _sample_times(cfg: PassConfig) -> np.ndarray:
    n = int(math.floor(cfg.duration / cfg.sample_interval + 1e-9))
    return np.arange(n + 1) * cfg.sample_interval


def generate_trajectory(cfg: PassConfig, station: GeoPoint = DEFAULT_STATION) -> list[TrajectorySample]:
    """Sample a pass every ``sample_interval`` seconds over ``[0, duration]``.

    Range, look angles, rates and time of flight are exact; only the reported
    ``position`` carries optional Gaussian GPS noise.
    """
    t = _sample_times(cfg)
    if cfg.kind is PassKind.ARC:
        kin = _arc(cfg, t)
    elif cfg.kind is PassKind.LINE:
        kin = _line(cfg, t)
    else:
        kin = _satellite(cfg, t)
    rng, az, el, az_rate, el_rate, ang_speed = _look_angles(kin.pos, kin.vel)
    noisy = kin.pos
    if cfg.gps_noise_sigma > 0:
        gen = np.random.default_rng(cfg.seed)
        noisy = kin.pos + gen.normal(0.0, cfg.gps_noise_sigma, size=kin.pos.shape)
    station = GeoPoint(station.latitude, station.longitude, cfg.ground_altitude)
    geo = local_to_geodetic(noisy, station, spherical=cfg.kind is PassKind.SATELLITE)
    tof = rng / SPEED_OF_LIGHT
    return [
        TrajectorySample(
            t=float(t[i]),
            position=GeoPoint(float(geo[i, 0]), float((geo[i, 1] + 180.0) % 360.0 - 180.0), float(geo[i, 2])),
            range=float(rng[i]),
            azimuth=float(az[i]),
            elevation=float(el[i]),
            az_rate=float(az_rate[i]),
            el_rate=float(el_rate[i]),
            angular_speed=float(ang_speed[i]),
            tof=float(tof[i]),
        )
        for i in range(len(t))
    ]


def gps_time_of_flight(samples: Sequence[TrajectorySample], cfg: PassConfig,
                       station: GeoPoint = DEFAULT_STATION) -> np.ndarray:
    """Time of flight recomputed from the (noisy) reported positions."""
    station = GeoPoint(station.latitude, station.longitude, cfg.ground_altitude)
    local = geodetic_to_local([s.position for s in samples], station,
                              spherical=cfg.kind is PassKind.SATELLITE)
    return np.linalg.norm(local, axis=1) / SPEED_OF_LIGHT


def max_angular_speed(samples: Sequence[TrajectorySample]) -> float:
    return max(s.angular_speed for s in samples)


def columns(samples: Sequence[TrajectorySample]) -> dict[str, np.ndarray]:
    """Column arrays keyed by attribute name."""
    names = ("t", "range", "azimuth", "elevation", "az_rate", "el_rate", "angular_speed", "tof")
    return {k: np.array([getattr(s, k) for s in samples], dtype=float) for k in names}


def write_trajectory_csv(path, samples: Sequence[TrajectorySample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_CSV_HEADER)
        for s in samples:
            w.writerow(s.csv_row())
