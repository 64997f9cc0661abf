"""Command-line entry point: ``simulate``, ``fuse``, ``evaluate``, ``plot``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric or gauge failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, FusionError
from .evaluation import DEFAULT_RPE_LENGTHS, evaluate, horn_align, associate
from .geodesy import EnuOrigin, GeoPoint
from .pipeline import RunConfig, fuse_files
from .simulate import Scenario, simulate

log = logging.getLogger("posefusion")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser():
    p = _Parser(prog="posefusion", description="Pose-graph fusion of local odometry with global sensors.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate synthetic sensor streams and a matching fuse config")
    s.add_argument("--scenario", required=True, help="scenario key/value file")
    s.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    s.add_argument("--out", required=True, help="output directory")

    f = sub.add_parser("fuse", help="run the fusion pipeline")
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="ATE and RPE of an estimate against ground truth")
    e.add_argument("--est", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--rpe-lengths", type=float, nargs="+", default=list(DEFAULT_RPE_LENGTHS))
    e.add_argument("--max-dt", type=float, default=0.02, help="association tolerance, s")
    e.add_argument("--with-scale", action="store_true", help="similarity instead of rigid alignment")
    e.add_argument("--out", required=True)

    pl = sub.add_parser("plot", help="emit aligned x/y/z series for overlay plots")
    pl.add_argument("--out", required=True, help="table file; the legend goes to <out>.legend.json")
    pl.add_argument("--no-align", action="store_true", help="skip alignment to the first trajectory")
    pl.add_argument("--max-dt", type=float, default=0.02)
    pl.add_argument("trajectories", nargs="+")
    return p


# -- simulate -----------------------------------------------------------------


def cmd_simulate(args):
    scenario = io.read_config(Scenario, args.scenario)
    seed = scenario.seed if args.seed is None else args.seed
    streams = simulate(scenario, seed)
    out = Path(args.out)

    files = {"truth.txt": None, "odometry.txt": None}
    cfg = RunConfig(
        odometry="odometry.txt",
        gps_enabled=scenario.gps_enabled,
        mag_enabled=scenario.mag_enabled,
        baro_enabled=scenario.baro_enabled,
        gps_base_sigma=max(scenario.gps_sigma, 1e-3),
        mag_base_sigma=max(scenario.mag_sigma, 1e-3),
        mag_field=tuple(scenario.mag_field),
        mag_body_to_sensor=tuple(scenario.mag_body_to_sensor),
    )
    gps_rows = streams.gps
    if scenario.gps_enabled:
        cfg.gps = "gps.txt"
        if scenario.gps_frame == "lla":
            origin = EnuOrigin.from_geopoint(GeoPoint(*scenario.geo_origin))
            lla = []
            for r in gps_rows:
                g = origin.enu_to_lla(r[1:4])
                lla.append([r[0], g.latitude, g.longitude, g.altitude, r[4]])
            gps_rows = np.array(lla).reshape(-1, 5)
    if scenario.mag_enabled:
        cfg.mag = "mag.txt"
    if scenario.baro_enabled:
        cfg.baro = "baro.txt"

    # render everything before touching the output directory
    io.write_trajectory(out / "truth.txt", streams.truth)
    io.write_trajectory(out / "odometry.txt", streams.odometry)
    if scenario.gps_enabled:
        io.write_gps(out / "gps.txt", gps_rows, scenario.gps_frame)
    if scenario.mag_enabled:
        io.write_mag(out / "mag.txt", streams.mag)
    if scenario.baro_enabled:
        io.write_baro(out / "baro.txt", streams.baro)
    io.atomic_write(out / "scenario.cfg", io.to_kv(scenario))
    io.atomic_write(out / "fuse.cfg", io.to_kv(cfg))
    print(f"wrote {len(streams.truth)} poses to {out}")
    return 0


# -- fuse ---------------------------------------------------------------------


def cmd_fuse(args):
    result = fuse_files(args.config, args.out)
    for w in result.warnings:
        log.warning(w)
    counts = result.graph.factor_counts()
    print(
        f"fused {len(result.fused)} nodes, {len(result.predicted)} predicted poses, "
        f"{len(result.cycles)} cycles; factors {counts}"
    )
    return 0


# -- evaluate -----------------------------------------------------------------


def cmd_evaluate(args):
    est = io.read_trajectory(args.est)
    gt = io.read_trajectory(args.gt)
    report = evaluate(est, gt, tuple(args.rpe_lengths), args.max_dt, args.with_scale)
    items = report.as_items()
    width = max(len(k) for k, _ in items)
    text = "\n".join(f"{k:<{width}}  {_show(v)}" for k, v in items) + "\n"
    kv = "\n".join(f"{k} = {_show(v)}" for k, v in items) + "\n"
    out = Path(args.out)
    io.atomic_write(out / "report.txt", text)
    io.atomic_write(out / "report.kv", kv)
    sys.stdout.write(text)
    return 0


def _show(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return io.fmt(v)
    return str(v)


# -- plot ---------------------------------------------------------------------


def cmd_plot(args):
    trajs = [io.read_trajectory(p) for p in args.trajectories]
    ref = trajs[0]
    lines = ["# series t x y z"]
    legend = []
    for k, (path, tr) in enumerate(zip(args.trajectories, trajs)):
        name = f"s{k}:{Path(path).stem}"
        entry = {"series": name, "source": str(path), "rows": len(tr), "aligned_to": None}
        if k > 0 and not args.no_align:
            pairs = associate(tr, ref, args.max_dt)
            a = horn_align(tr.subset(pairs[:, 0]).positions, ref.subset(pairs[:, 1]).positions)
            tr = tr.transformed(a.as_pose())
            entry["aligned_to"] = legend[0]["series"]
            entry["rotation"] = a.rotation.tolist()
            entry["translation"] = a.translation.tolist()
        for t, p in zip(tr.timestamps, tr.positions):
            lines.append(" ".join([name, io.fmt(t), *(io.fmt(x) for x in p)]))
        legend.append(entry)
    out = Path(args.out)
    io.atomic_write(out, "\n".join(lines) + "\n")
    io.atomic_write(out.with_name(out.name + ".legend.json"), json.dumps({"columns": ["series", "t", "x", "y", "z"], "series": legend}, indent=1) + "\n")
    print(f"wrote {len(legend)} series to {out}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "fuse": cmd_fuse, "evaluate": cmd_evaluate, "plot": cmd_plot}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code if isinstance(exc, FileNotFoundError) else 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
