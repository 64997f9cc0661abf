"""Orientation and height observability studies.

``--study yaw``: straight line with and without the magnetometer; reports
mean yaw error and mean full rotation error, optionally over several speeds.
``--study height``: helix with poor GPS altitude, with and without barometer.
"""
from dataclasses import dataclass, field

import numpy as np
from _common import emit, parse_config

from posefusion.evaluation import associate
from posefusion.manifold import quat_boxminus, wrap_angle, yaw_of
from posefusion.pipeline import RunConfig, run_fusion
from posefusion.simulate import Scenario, simulate


@dataclass
class Config:
    study: str = "yaw"
    seeds: int = 10
    speeds: list = field(default_factory=lambda: [10.0])
    path_length: float = 1000.0
    gps_vertical: float = 3.0
    baro_sigma: float = 0.3


def yaw_study(cfg):
    rows = []
    for speed in cfg.speeds:
        for mag in (True, False):
            yaw, full = [], []
            for seed in range(cfg.seeds):
                s = simulate(Scenario(shape="straight", speed=speed, path_length=cfg.path_length, mag_enabled=True), seed)
                rc = RunConfig(gps_base_sigma=0.5, mag_base_sigma=0.01, mag_enabled=mag)
                f = run_fusion(s.odometry, rc, s.gps, s.mag).fused
                pr = associate(f, s.truth)
                qf, qt = f.orientations[pr[:, 0]], s.truth.orientations[pr[:, 1]]
                yaw.append(np.degrees(np.abs(wrap_angle(yaw_of(qf) - yaw_of(qt)))).mean())
                full.append(np.degrees(np.linalg.norm(quat_boxminus(qf, qt), axis=1)).mean())
            rows.append((speed, "on" if mag else "off", float(np.mean(yaw)), float(np.max(yaw)), float(np.mean(full))))
    emit(["speed_mps", "mag", "mean_yaw_deg", "worst_seed_yaw_deg", "mean_rotation_deg"], rows)


def height_study(cfg):
    rows = []
    for seed in range(cfg.seeds):
        sc = Scenario(shape="helix", path_length=cfg.path_length, gps_sigma_vertical=cfg.gps_vertical,
                      baro_enabled=True, baro_sigma=cfg.baro_sigma)
        s = simulate(sc, seed)
        out = [seed]
        for baro in (True, False):
            f = run_fusion(s.odometry, RunConfig(gps_base_sigma=0.5, baro_enabled=baro), s.gps, None, s.baro).fused
            pr = associate(f, s.truth)
            dz = f.positions[pr[:, 0], 2] - s.truth.positions[pr[:, 1], 2]
            out.append(float(np.sqrt(np.mean(dz * dz))))
        rows.append(tuple(out))
    emit(["seed", "height_rmse_baro_m", "height_rmse_nobaro_m"], rows)


if __name__ == "__main__":
    cfg = parse_config(Config, __doc__)
    {"yaw": yaw_study, "height": height_study}[cfg.study](cfg)
