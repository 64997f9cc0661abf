"""Replay of odometry and global streams through the graph and solver."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, DomainError
from .evaluation import Trajectory
from .factors import BaroMeasurement, GpsMeasurement, MagMeasurement, MagReference, baro_variance
from .geodesy import DEFAULT_BARO_SLOPE, EnuOrigin, GeoPoint, lla_to_enu
from .graph import GraphConfig, PoseGraph, predict_global
from .manifold import Pose
from .solver import SolverOptions, optimize

log = logging.getLogger(__name__)

_PRIORITY = {"odom": 0, "gps": 1, "mag": 2, "baro": 3}


@dataclass
class RunConfig:
    """Settings for ``fuse``. Paths are relative to the config file."""

    odometry: str | None = None
    gps: str | None = None
    mag: str | None = None
    baro: str | None = None
    gps_enabled: bool = True
    mag_enabled: bool = True
    baro_enabled: bool = True

    gps_base_sigma: float = 1.0
    gps_reference_satellites: int = 10
    gps_huber_delta: float | None = 1.0
    mag_base_sigma: float = 0.05
    mag_field: tuple = (0.0, 0.22, -0.42)
    mag_body_to_sensor: tuple = (1.0, 0.0, 0.0, 0.0)
    baro_window: int = 10
    baro_default_variance: float = 1.0
    baro_slope: float = DEFAULT_BARO_SLOPE
    odom_sigma_trans: float = 0.01
    odom_trans_fraction: float = 0.01
    odom_sigma_rot: float = 0.001
    odom_rot_fraction: float = 0.01

    keyframe_interval: float = 0.1
    window_capacity: int = 100000
    association_tolerance: float = 0.05
    optimization_period: float = 1.0

    max_iterations: int = 50
    cost_tolerance: float = 1e-8
    gradient_tolerance: float = 1e-8
    initial_damping: float = 1e-4
    jacobian: str = "analytic"

    def __post_init__(self):
        for name in ("keyframe_interval", "association_tolerance", "optimization_period",
                     "gps_base_sigma", "mag_base_sigma", "baro_default_variance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.window_capacity < 2:
            raise ConfigError("window_capacity must be at least 2")
        if self.baro_window < 1:
            raise ConfigError("baro_window must be at least 1")
        if self.gps_huber_delta is not None and not self.gps_huber_delta > 0:
            raise ConfigError("gps_huber_delta must be positive or none")
        if len(self.mag_field) != 3 or len(self.mag_body_to_sensor) != 4:
            raise ConfigError("mag_field needs 3 values and mag_body_to_sensor 4")

    def graph_config(self):
        return GraphConfig(
            keyframe_interval=self.keyframe_interval,
            association_tolerance=self.association_tolerance,
            window_capacity=self.window_capacity,
            gps_base_sigma=self.gps_base_sigma,
            gps_reference_satellites=self.gps_reference_satellites,
            gps_huber_delta=self.gps_huber_delta,
            mag_base_sigma=self.mag_base_sigma,
            mag_reference=MagReference(np.array(self.mag_field), np.array(self.mag_body_to_sensor)),
            odom_sigma_trans=self.odom_sigma_trans,
            odom_trans_fraction=self.odom_trans_fraction,
            odom_sigma_rot=self.odom_sigma_rot,
            odom_rot_fraction=self.odom_rot_fraction,
        )

    def solver_options(self):
        return SolverOptions(
            max_iterations=self.max_iterations,
            cost_tolerance=self.cost_tolerance,
            gradient_tolerance=self.gradient_tolerance,
            initial_damping=self.initial_damping,
            jacobian=self.jacobian,
        )


@dataclass
class FusionResult:
    fused: Trajectory
    predicted: Trajectory
    cycles: list = field(default_factory=list)
    graph: PoseGraph | None = None
    warnings: list = field(default_factory=list)

    def counters(self):
        g = self.graph
        return {
            "attached": dict(sorted(g.attached.items())),
            "dropped": dict(sorted(g.dropped.items())),
            "rejected": dict(sorted(g.rejected.items())),
        }


def _events(odometry, gps, mag, baro):
    ev = []
    for k, t in enumerate(odometry.timestamps):
        ev.append((float(t), _PRIORITY["odom"], k, "odom"))
    for name, rows in (("gps", gps), ("mag", mag), ("baro", baro)):
        if rows is None:
            continue
        for k, item in enumerate(rows):
            t = item[0]
            ev.append((float(t), _PRIORITY[name], k, name))
    ev.sort()
    return ev


def run_fusion(odometry: Trajectory, config: RunConfig, gps=None, mag=None, baro=None, gps_frame="enu"):
    """Fuse in-memory streams.

    ``gps`` rows are ``(t, a, b, c, nsats)`` in ``gps_frame`` (``enu`` or
    ``lla``); ``mag`` rows ``(t, mx, my, mz)``; ``baro`` rows ``(t, height)``.
    Streams disabled in ``config`` are ignored.
    """
    if odometry is None or len(odometry) == 0:
        raise ConfigError("fusion needs an odometry stream")
    gps = gps if config.gps_enabled and gps is not None and len(gps) else None
    mag = mag if config.mag_enabled and mag is not None and len(mag) else None
    baro = baro if config.baro_enabled and baro is not None and len(baro) else None
    warnings = []
    if gps is None and mag is None and baro is None:
        warnings.append("no global sensors enabled; output is dead-reckoned odometry")
        log.warning(warnings[-1])

    graph = PoseGraph(config.graph_config())
    options = config.solver_options()
    cycles = []
    pred_t, pred_poses = [], []
    baro_recent = []
    last_opt = None

    def cycle(t):
        snap = graph.snapshot()
        if not graph.factors or snap.fixed.all() or not any(f.arity == 1 for f in graph.factors):
            return
        res = optimize(snap, options)
        graph.apply(snap, res.positions, res.orientations)
        removed = graph.trim_window()
        entry = {"t": t, "nodes": len(snap.ids), "factors": graph.factor_counts(), "trimmed": removed}
        entry.update(res.report.as_dict())
        cycles.append(entry)

    for t, _, k, kind in _events(odometry, gps, mag, baro):
        if kind == "odom":
            local = odometry.pose(k)
            nid = graph.add_odometry(local, t)
            if nid is not None and (last_opt is None or t - last_opt >= config.optimization_period - 1e-9):
                if last_opt is None:
                    last_opt = t
                else:
                    cycle(t)
                    last_opt = t
            pred_t.append(t)
            pred_poses.append(predict_global(local, graph.transform))
            continue
        try:
            if kind == "gps":
                row = gps[k]
                sats = None if np.isnan(row[4]) else int(row[4])
                if gps_frame == "lla":
                    geo = GeoPoint(row[1], row[2], row[3])
                    if graph.origin is None:
                        # the first fix becomes the ENU origin
                        graph.origin = EnuOrigin.from_geopoint(geo)
                    enu = lla_to_enu(geo, graph.origin)
                    graph.attach_global("gps", GpsMeasurement(enu, sats, t), t)
                else:
                    graph.attach_global("gps", GpsMeasurement(row[1:4], sats, t), t)
            elif kind == "mag":
                graph.attach_global("mag", MagMeasurement(mag[k][1:4], t), t)
            else:
                h = float(baro[k][1])
                baro_recent.append(h)
                del baro_recent[:-config.baro_window]
                var = baro_variance(baro_recent, config.baro_default_variance)
                graph.attach_global("baro", BaroMeasurement(h, var, t), t)
        except DomainError as exc:
            warnings.append(f"t={t}: {exc}")

    graph.flush_pending()
    if graph.nodes:
        cycle(float(graph.nodes[-1].timestamp))

    nodes = graph.all_nodes()
    fused = Trajectory.from_poses([n.timestamp for n in nodes], [n.state for n in nodes])
    predicted = Trajectory.from_poses(pred_t, pred_poses)
    return FusionResult(fused, predicted, cycles, graph, warnings)


# -- file-level command -------------------------------------------------------


def _resolve(base, p):
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else Path(base) / p


def fuse_files(config_path, out_dir):
    """The ``fuse`` command: read config and streams, fuse, write outputs."""
    config_path = Path(config_path)
    config = io.read_config(RunConfig, config_path)
    base = config_path.parent
    paths = {k: _resolve(base, getattr(config, k)) for k in ("odometry", "gps", "mag", "baro")}
    if paths["odometry"] is None:
        raise ConfigError("config has no odometry file")
    for k, p in paths.items():
        if p is not None and getattr(config, f"{k}_enabled", True) and not p.exists():
            raise ConfigError(f"{k} file not found: {p}")

    odometry = io.read_trajectory(paths["odometry"])
    gps, frame, mag, baro = None, "enu", None, None
    if paths["gps"] is not None and config.gps_enabled:
        frame, gps = io.read_gps(paths["gps"])
    if paths["mag"] is not None and config.mag_enabled:
        mag = io.read_mag(paths["mag"])
    if paths["baro"] is not None and config.baro_enabled:
        baro = io.read_baro(paths["baro"], config.baro_slope)

    result = run_fusion(odometry, config, gps, mag, baro, frame)

    out = Path(out_dir)
    io.write_trajectory(out / "fused.txt", result.fused)
    io.write_trajectory(out / "predicted.txt", result.predicted)
    cfg_text = io.to_kv(config)
    run_log = {
        "config_sha256": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "inputs": {k: {"path": str(p), "sha256": io.file_digest(p)} for k, p in paths.items() if p is not None and p.exists()},
        "gps_frame": frame,
        "counters": result.counters(),
        "factor_counts": result.graph.factor_counts(),
        "nodes": len(result.fused),
        "warnings": result.warnings,
        "cycles": result.cycles,
    }
    io.atomic_write(out / "run_log.json", json.dumps(run_log, indent=1, sort_keys=True) + "\n")
    return result
