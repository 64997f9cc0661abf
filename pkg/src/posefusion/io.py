"""Plain-text file formats and the flat ``key = value`` config format.

Trajectory (also used for odometry)::

    # t px py pz qw qx qy qz
    0.0 0.0 0.0 0.0 1.0 0.0 0.0 0.0

GPS: ``t lat lon alt nsats`` under ``# frame: lla`` (default) or
``t x y z nsats`` under ``# frame: enu``. Magnetometer: ``t mx my mz``.
Barometer: ``t height_m`` under ``# baro: height`` (default) or
``t pressure_pa`` under ``# baro: pressure``.

Header lines have the form ``# key: value``; any other ``#`` line is a comment.
"""
from __future__ import annotations

import dataclasses
import hashlib
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .evaluation import Trajectory
from .geodesy import DEFAULT_BARO_SLOPE, pressure_to_height

_HEADER = re.compile(r"^#\s*([A-Za-z_]+)\s*:\s*(\S+)\s*$")
QUAT_TOLERANCE = 1e-3


def fmt(x) -> str:
    """Shortest decimal that round-trips the float exactly."""
    x = float(x)
    if x == 0.0:
        x = 0.0  # drop the sign of -0.0
    return repr(x)


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_table(path, ncols, allowed_headers):
    """Numeric rows plus parsed header values; enforces column count and time order."""
    headers = {}
    rows = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc}", path) from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER.match(line)
            if m:
                key, value = m.group(1).lower(), m.group(2).lower()
                if key not in allowed_headers:
                    raise ParseError(f"unknown header {key!r}", path, lineno)
                if value not in allowed_headers[key]:
                    raise ParseError(f"unknown {key} {value!r}", path, lineno)
                if key in headers and headers[key] != value:
                    raise ParseError(f"conflicting {key} headers ({headers[key]} vs {value})", path, lineno)
                headers[key] = value
            continue
        parts = line.split()
        if len(parts) != ncols:
            raise ParseError(f"expected {ncols} fields, got {len(parts)}", path, lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"malformed number: {exc}", path, lineno) from exc
        if not all(np.isfinite(vals)):
            raise ParseError("non-finite value", path, lineno)
        if rows and not vals[0] > rows[-1][0]:
            raise ParseError("timestamps not strictly increasing", path, lineno)
        rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, ncols), headers


def read_trajectory(path) -> Trajectory:
    rows, _ = _read_table(path, 8, {})
    if len(rows) == 0:
        raise ParseError("empty trajectory", path)
    q = rows[:, 4:8]
    norms = np.linalg.norm(q, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > QUAT_TOLERANCE)
    if bad.size:
        raise ParseError(f"non-unit quaternion (norm {norms[bad[0]]:.6f}) in record {bad[0] + 1}", path)
    return Trajectory(rows[:, 0], rows[:, 1:4], q / norms[:, None])


def write_trajectory(path, traj: Trajectory, comment="t px py pz qw qx qy qz"):
    out = [f"# {comment}"]
    for t, p, q in zip(traj.timestamps, traj.positions, traj.orientations):
        out.append(" ".join(fmt(v) for v in (t, *p, *q)))
    atomic_write(path, "\n".join(out) + "\n")


def read_gps(path):
    """Returns ``(frame, rows)`` with rows ``t a b c nsats``."""
    rows, headers = _read_table(path, 5, {"frame": ("enu", "lla")})
    return headers.get("frame", "lla"), rows


def write_gps(path, rows, frame="enu"):
    out = [f"# frame: {frame}", "# t x y z nsats" if frame == "enu" else "# t lat lon alt nsats"]
    for r in rows:
        out.append(" ".join([*(fmt(v) for v in r[:4]), str(int(r[4]))]))
    atomic_write(path, "\n".join(out) + "\n")


def read_mag(path):
    rows, _ = _read_table(path, 4, {})
    return rows


def write_mag(path, rows):
    out = ["# t mx my mz"] + [" ".join(fmt(v) for v in r) for r in rows]
    atomic_write(path, "\n".join(out) + "\n")


def read_baro(path, slope=DEFAULT_BARO_SLOPE):
    """Heights in meters; pressure files are referenced to their first sample."""
    rows, headers = _read_table(path, 2, {"baro": ("height", "pressure")})
    if headers.get("baro", "height") == "pressure" and len(rows):
        ref = rows[0, 1]
        heights = [pressure_to_height(p, ref, slope) for p in rows[:, 1]]
        rows = np.column_stack([rows[:, 0], heights])
    return rows


def write_baro(path, rows, kind="height"):
    out = [f"# baro: {kind}", "# t height_m" if kind == "height" else "# t pressure_pa"]
    out += [" ".join(fmt(v) for v in r) for r in rows]
    atomic_write(path, "\n".join(out) + "\n")


# -- key/value config ---------------------------------------------------------


def parse_kv(text, path=None):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", path, lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", path, lineno)
        out[key] = value
    return out


def _convert(value: str, annotation: str, key: str):
    ann = annotation.replace(" ", "")
    optional = "None" in ann
    if optional and value.lower() in ("none", "off", ""):
        return None
    try:
        if ann.startswith("bool"):
            v = value.lower()
            if v in ("true", "yes", "1", "on"):
                return True
            if v in ("false", "no", "0", "off"):
                return False
            raise ValueError(value)
        if ann.startswith("int"):
            return int(value)
        if ann.startswith("float"):
            return float(value)
        if ann.startswith("tuple"):
            return tuple(float(v) for v in value.replace(",", " ").split())
        if ann.startswith("list"):
            return [[float(v) for v in pt.replace(",", " ").split()] for pt in value.split(";") if pt.strip()]
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def to_kv(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if v is None:
            s = "none"
        elif isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, (tuple, np.ndarray)):
            s = ", ".join(fmt(x) for x in v)
        elif isinstance(v, list):
            s = "; ".join(", ".join(fmt(x) for x in pt) for pt in v)
        elif isinstance(v, float):
            s = fmt(v)
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"


def load_dataclass(cls, mapping, path=None):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown}" + (f" in {path}" if path else ""))
    kwargs = {k: _convert(v, str(fields[k].type), k) for k, v in mapping.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def read_config(cls, path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        mapping = parse_kv(text, path)
    except ParseError as exc:
        raise ConfigError(str(exc)) from exc
    return load_dataclass(cls, mapping, path)
