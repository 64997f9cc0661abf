"""Per-seed ATE of raw odometry and fused output on the 1 km drift scenario.

Optional ``--rates`` sweeps the odometry rate to show how the odometry-only
error depends on the step count under per-step noise.
"""
from dataclasses import dataclass, field

from _common import emit, parse_config

from posefusion.evaluation import ate_rmse
from posefusion.pipeline import RunConfig, run_fusion
from posefusion.simulate import Scenario, simulate


@dataclass
class Config:
    seeds: int = 10
    rates: list = field(default_factory=lambda: [10.0])
    path_length: float = 1000.0
    fuse: bool = True


def main(cfg: Config):
    rows = []
    for rate in cfg.rates:
        for seed in range(cfg.seeds):
            s = simulate(Scenario(rate=rate, path_length=cfg.path_length), seed)
            odo = ate_rmse(s.odometry, s.truth)
            fused = float("nan")
            if cfg.fuse:
                fused = ate_rmse(run_fusion(s.odometry, RunConfig(gps_base_sigma=0.5), s.gps).fused, s.truth)
            rows.append((rate, seed, odo, fused, odo / fused))
    emit(["rate_hz", "seed", "odometry_ate_m", "fused_ate_m", "ratio"], rows)


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
