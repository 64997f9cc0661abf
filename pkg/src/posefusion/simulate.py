"""Synthetic ground truth and sensor streams with seeded noise."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .evaluation import Trajectory
from .manifold import Pose, quat_canonical, quat_conj, quat_exp, quat_mul, quat_rotate, relative_pose

SHAPES = ("straight", "circle", "figure-eight", "helix", "waypoints")


@dataclass
class Scenario:
    shape: str = "circle"
    path_length: float = 1000.0
    speed: float = 10.0
    rate: float = 10.0
    heading: float = 0.0  # initial direction of travel, rad from East
    radius: float | None = None  # circle/helix; default closes one loop
    climb_rate: float = 0.5  # helix, m/s
    waypoints: list = field(default_factory=list)

    odom_sigma_trans: float = 0.0  # absolute, m per step
    odom_trans_fraction: float = 0.01  # of step length
    odom_sigma_yaw: float = 0.002  # rad per step
    odom_sigma_tilt: float = 0.0  # roll/pitch, rad per step
    odom_yaw_bias: float = 0.0  # rad/s

    gps_enabled: bool = True
    gps_sigma: float = 0.5
    gps_sigma_vertical: float | None = None  # default 2 * gps_sigma
    gps_rate: float = 1.0
    gps_dropout: float = 0.0
    gps_satellites: tuple = (10, 14)
    gps_outlier_fraction: float = 0.0
    gps_outlier_magnitude: float = 50.0
    gps_walk_sigma: float = 0.0  # correlated error, m per sqrt(s)
    gps_frame: str = "enu"  # frame written to the GPS file: enu or lla
    geo_origin: tuple = (22.3, 114.2, 10.0)  # lat, lon, alt of the truth ENU origin

    mag_enabled: bool = False
    mag_sigma: float = 0.01  # relative to the field magnitude
    mag_rate: float = 10.0
    mag_field: tuple = (0.0, 0.22, -0.42)  # ENU, gauss; dip of about 62 degrees
    mag_body_to_sensor: tuple = (1.0, 0.0, 0.0, 0.0)

    baro_enabled: bool = False
    baro_sigma: float = 0.3
    baro_rate: float = 10.0

    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        for name in ("rate", "gps_rate", "mag_rate", "baro_rate"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in (
            "odom_sigma_trans", "odom_trans_fraction", "odom_sigma_yaw", "odom_sigma_tilt",
            "gps_sigma", "mag_sigma", "baro_sigma", "gps_walk_sigma",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.gps_frame not in ("enu", "lla"):
            raise ConfigError("gps_frame must be 'enu' or 'lla'")
        if not 0 <= self.gps_dropout <= 1 or not 0 <= self.gps_outlier_fraction <= 1:
            raise ConfigError("probabilities must lie in [0, 1]")

    @property
    def gps_vertical(self):
        return 2.0 * self.gps_sigma if self.gps_sigma_vertical is None else self.gps_sigma_vertical


@dataclass
class SensorStreams:
    truth: Trajectory
    odometry: Trajectory  # integrated local poses, first pose identity
    gps: np.ndarray  # (n, 5): t, x, y, z, satellites
    mag: np.ndarray  # (n, 4): t, mx, my, mz
    baro: np.ndarray  # (n, 2): t, height


def _yaw_quat(yaw):
    yaw = np.asarray(yaw, dtype=float)
    q = np.zeros(yaw.shape + (4,))
    q[..., 0] = np.cos(yaw / 2)
    q[..., 3] = np.sin(yaw / 2)
    return quat_canonical(q)


def _resample_polyline(pts, s):
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    out = np.column_stack([np.interp(s, cum, pts[:, k]) for k in range(pts.shape[1])])
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    d = pts[k + 1] - pts[k]
    return out, np.arctan2(d[:, 1], d[:, 0])


def generate_truth(scenario: Scenario) -> Trajectory:
    sc = scenario
    if not sc.speed > 0:
        raise ConfigError("speed must be positive")
    if sc.shape == "waypoints":
        pts = np.asarray(sc.waypoints, dtype=float)
        if pts.ndim != 2 or len(pts) < 2:
            raise ConfigError("waypoint scenario needs at least two points")
        if pts.shape[1] == 2:
            pts = np.column_stack([pts, np.zeros(len(pts))])
        length = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    else:
        length = sc.path_length
    if not length > 0:
        raise ConfigError("path length must be positive")

    n = int(round(length / sc.speed * sc.rate))
    t = np.arange(n + 1) / sc.rate
    s = np.minimum(sc.speed * t, length)
    h = sc.heading

    if sc.shape == "straight":
        pos = np.column_stack([s * np.cos(h), s * np.sin(h), np.zeros_like(s)])
        yaw = np.full_like(s, h)
    elif sc.shape in ("circle", "helix"):
        r = sc.radius or length / (2 * np.pi)
        phi = s / r
        center = r * np.array([-np.sin(h), np.cos(h)])
        pos = np.column_stack(
            [center[0] + r * np.sin(h + phi), center[1] - r * np.cos(h + phi), np.zeros_like(s)]
        )
        if sc.shape == "helix":
            pos[:, 2] = sc.climb_rate * t
        yaw = h + phi
    elif sc.shape == "figure-eight":
        # lemniscate of Gerono scaled to the requested length, arc-length resampled
        th = np.linspace(0.0, 2 * np.pi, 20001)
        curve = np.column_stack([np.sin(th), np.sin(th) * np.cos(th)])
        unit = float(np.sum(np.linalg.norm(np.diff(curve, axis=0), axis=1)))
        curve *= length / unit
        c, sn = np.cos(h - np.pi / 4), np.sin(h - np.pi / 4)
        curve = curve @ np.array([[c, sn], [-sn, c]])
        xy, yaw = _resample_polyline(curve, s)
        pos = np.column_stack([xy, np.zeros(len(s))])
    else:
        pos, yaw = _resample_polyline(pts, s)
    return Trajectory(t, pos, _yaw_quat(yaw))


def relative_steps(truth: Trajectory):
    poses = truth.poses()
    return [relative_pose(a, b) for a, b in zip(poses, poses[1:])]


def generate_odometry(truth: Trajectory, scenario: Scenario, seed=None):
    """Noisy relative-pose stream: one step per truth interval."""
    sc = scenario
    rng = np.random.default_rng(_seed(sc, seed, 0))
    steps = relative_steps(truth)
    dt = np.diff(truth.timestamps)
    out = []
    for z, h in zip(steps, dt):
        length = float(np.linalg.norm(z.position))
        st = sc.odom_sigma_trans + sc.odom_trans_fraction * length
        n_t = rng.normal(0.0, 1.0, 3) * st
        n_r = rng.normal(0.0, 1.0, 3) * np.array([sc.odom_sigma_tilt, sc.odom_sigma_tilt, sc.odom_sigma_yaw])
        n_r[2] += sc.odom_yaw_bias * h
        out.append(Pose(z.position + n_t, quat_mul(z.orientation, quat_exp(n_r))))
    return out


def integrate_odometry(steps, start: Pose | None = None):
    pose = start or Pose.identity()
    poses = [pose]
    for z in steps:
        pose = pose.compose(z)
        poses.append(pose)
    return poses


def _seed(sc, seed, k):
    base = sc.seed if seed is None else seed
    return np.random.SeedSequence(base).spawn(5)[k]


def _subsample(truth, rate):
    period = 1.0 / rate
    t = truth.timestamps
    k = np.floor(t / period + 1e-9)
    first = np.concatenate([[True], k[1:] != k[:-1]])
    return np.flatnonzero(first)


def generate_gps(truth: Trajectory, scenario: Scenario, seed=None):
    """Rows ``(t, x, y, z, satellites)`` in the truth (ENU) frame."""
    sc = scenario
    rng = np.random.default_rng(_seed(sc, seed, 1))
    idx = _subsample(truth, sc.gps_rate)
    n = len(idx)
    sigma = np.array([sc.gps_sigma, sc.gps_sigma, sc.gps_vertical])
    noise = rng.normal(0.0, 1.0, (n, 3)) * sigma
    if sc.gps_walk_sigma > 0:
        steps = rng.normal(0.0, sc.gps_walk_sigma / np.sqrt(sc.gps_rate), (n, 3))
        noise += np.cumsum(steps, axis=0)
    outlier = rng.random(n) < sc.gps_outlier_fraction
    direction = rng.normal(0.0, 1.0, (n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    noise[outlier] = direction[outlier] * sc.gps_outlier_magnitude
    lo, hi = (int(v) for v in sc.gps_satellites)
    sats = rng.integers(lo, hi + 1, n)
    keep = rng.random(n) >= sc.gps_dropout
    rows = np.column_stack([truth.timestamps[idx], truth.positions[idx] + noise, sats])
    return rows[keep]


def generate_mag(truth: Trajectory, scenario: Scenario, seed=None):
    """Rows ``(t, mx, my, mz)``: ``q_mb * q_w^-1 * field + noise``."""
    sc = scenario
    rng = np.random.default_rng(_seed(sc, seed, 2))
    idx = _subsample(truth, sc.mag_rate)
    w = np.asarray(sc.mag_field, dtype=float)
    q_mb = quat_canonical(np.asarray(sc.mag_body_to_sensor, dtype=float))
    body = quat_rotate(quat_conj(truth.orientations[idx]), w)
    m = quat_rotate(np.broadcast_to(q_mb, (len(idx), 4)), body)
    m = m + rng.normal(0.0, 1.0, m.shape) * sc.mag_sigma * np.linalg.norm(w)
    return np.column_stack([truth.timestamps[idx], m])


def generate_baro(truth: Trajectory, scenario: Scenario, seed=None):
    """Rows ``(t, height)``: truth height plus noise."""
    sc = scenario
    rng = np.random.default_rng(_seed(sc, seed, 3))
    idx = _subsample(truth, sc.baro_rate)
    h = truth.positions[idx, 2] + rng.normal(0.0, sc.baro_sigma, len(idx))
    return np.column_stack([truth.timestamps[idx], h])


def simulate(scenario: Scenario, seed=None) -> SensorStreams:
    truth = generate_truth(scenario)
    steps = generate_odometry(truth, scenario, seed)
    odom = Trajectory.from_poses(truth.timestamps, integrate_odometry(steps))
    empty = np.zeros((0, 5))
    gps = generate_gps(truth, scenario, seed) if scenario.gps_enabled else empty
    mag = generate_mag(truth, scenario, seed) if scenario.mag_enabled else np.zeros((0, 4))
    baro = generate_baro(truth, scenario, seed) if scenario.baro_enabled else np.zeros((0, 2))
    return SensorStreams(truth, odom, gps, mag, baro)
