"""Solver wall time against chain length (best of several repeats)."""
import time
from dataclasses import dataclass, field

from _common import emit, parse_config

from posefusion.factors import GpsMeasurement
from posefusion.graph import GraphConfig, PoseGraph
from posefusion.simulate import Scenario, simulate
from posefusion.solver import optimize


@dataclass
class Config:
    sizes: list = field(default_factory=lambda: [500, 1000, 2000, 4000, 8000])
    repeats: int = 5
    radius: float = 150.0


def chain_snapshot(n, radius, seed=0):
    s = simulate(Scenario(shape="circle", path_length=float(n - 1), radius=radius), seed)
    g = PoseGraph(GraphConfig(gps_base_sigma=0.5))
    for k in range(len(s.odometry)):
        g.add_odometry(s.odometry.pose(k), s.odometry.timestamps[k])
    for row in s.gps:
        g.attach_global("gps", GpsMeasurement(row[1:4], int(row[4]), row[0]), row[0])
    return g.snapshot()


def main(cfg: Config):
    optimize(chain_snapshot(50, cfg.radius))  # compile
    rows = []
    for n in cfg.sizes:
        snap = chain_snapshot(n, cfg.radius)
        best, it = float("inf"), 0
        for _ in range(cfg.repeats):
            t0 = time.perf_counter()
            r = optimize(snap)
            best = min(best, time.perf_counter() - t0)
            it = r.report.iterations
        rows.append((n, it, best, best / it * 1e3, best / n * 1e6))
    emit(["nodes", "iterations", "best_s", "ms_per_iteration", "us_per_node"], rows)


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
