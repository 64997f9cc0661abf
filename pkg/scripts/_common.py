"""Shared helpers for the experiment scripts: dataclass configs from argv, TSV output."""
from __future__ import annotations

import argparse
import dataclasses
import sys


def parse_config(cls, description):
    """Build ``cls`` from ``--field value`` options, one per dataclass field."""
    p = argparse.ArgumentParser(description=description)
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if isinstance(default, bool):
            p.add_argument(f"--{f.name.replace('_', '-')}", action=argparse.BooleanOptionalAction, default=default)
        elif isinstance(default, (list, tuple)):
            kind = type(default[0]) if default else float
            p.add_argument(f"--{f.name.replace('_', '-')}", type=kind, nargs="+", default=list(default))
        else:
            p.add_argument(f"--{f.name.replace('_', '-')}", type=type(default), default=default)
    return cls(**vars(p.parse_args()))


def emit(header, rows, out=sys.stdout):
    out.write("\t".join(header) + "\n")
    for r in rows:
        out.write("\t".join(f"{v:.4g}" if isinstance(v, float) else str(v) for v in r) + "\n")
    out.flush()
