"""GPS outlier robustness: fused ATE with and without the Huber loss."""
from dataclasses import dataclass

from _common import emit, parse_config

from posefusion.evaluation import ate_rmse
from posefusion.pipeline import RunConfig, run_fusion
from posefusion.simulate import Scenario, simulate


@dataclass
class Config:
    seeds: int = 10
    fraction: float = 0.05
    magnitude: float = 50.0
    huber_delta: float = 1.0


def main(cfg: Config):
    rows = []
    for seed in range(cfg.seeds):
        clean = simulate(Scenario(), seed)
        dirty = simulate(Scenario(gps_outlier_fraction=cfg.fraction, gps_outlier_magnitude=cfg.magnitude), seed)
        base = ate_rmse(run_fusion(clean.odometry, RunConfig(gps_base_sigma=0.5), clean.gps).fused, clean.truth)
        on = RunConfig(gps_base_sigma=0.5, gps_huber_delta=cfg.huber_delta)
        off = RunConfig(gps_base_sigma=0.5, gps_huber_delta=None)
        a = ate_rmse(run_fusion(dirty.odometry, on, dirty.gps).fused, dirty.truth)
        b = ate_rmse(run_fusion(dirty.odometry, off, dirty.gps).fused, dirty.truth)
        rows.append((seed, base, a, b, a / base, b / base))
    emit(["seed", "clean_ate_m", "huber_ate_m", "plain_ate_m", "huber_ratio", "plain_ratio"], rows)


if __name__ == "__main__":
    main(parse_config(Config, __doc__))
