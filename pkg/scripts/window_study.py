"""Fused ATE and runtime against the sliding-window capacity."""
import time
from dataclasses import dataclass, field

from _common import emit, parse_config

from posefusion.evaluation import ate_rmse
from posefusion.pipeline import RunConfig, run_fusion
from posefusion.simulate import Scenario, simulate


@dataclass
class Config:
    capacities: list = field(default_factory=lambda: [100, 300, 1000, 100000])
    seeds: int = 3


def main(cfg: Config):
    rows = []
    for cap in cfg.capacities:
        for seed in range(cfg.seeds):
            s = simulate(Scenario(), seed)
            t0 = time.perf_counter()
            f = run_fusion(s.odometry, RunConfig(gps_base_sigma=0.5, window_capacity=cap), s.gps).fused
            rows.append((cap, seed, ate_rmse(f, s.truth), time.perf_counter() - t0))
    emit(["capacity", "seed", "fused_ate_m", "runtime_s"], rows)


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
