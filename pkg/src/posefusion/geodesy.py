"""WGS-84 geodetic conversions and the linear barometric height model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StateError

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

# meters of height per pascal near sea level (about 8.32 m per hPa)
DEFAULT_BARO_SLOPE = 1.0 / 12.013


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        vals = (self.latitude, self.longitude, self.altitude)
        if not all(np.isfinite(v) for v in vals):
            raise DomainError(f"non-finite geodetic coordinate {vals}")
        if not -90.0 <= self.latitude <= 90.0:
            raise DomainError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise DomainError(f"longitude {self.longitude} outside [-180, 180]")


def lla_to_ecef(p: GeoPoint) -> np.ndarray:
    if not isinstance(p, GeoPoint):
        p = GeoPoint(*p)
    lat = np.radians(p.latitude)
    lon = np.radians(p.longitude)
    sin_lat = np.sin(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    r = (n + p.altitude) * np.cos(lat)
    return np.array([r * np.cos(lon), r * np.sin(lon), (n * (1.0 - WGS84_E2) + p.altitude) * sin_lat])


def ecef_to_lla(xyz) -> GeoPoint:
    """Inverse of :func:`lla_to_ecef` by fixed-point iteration on latitude."""
    x, y, z = np.asarray(xyz, dtype=float)
    lon = np.arctan2(y, x)
    rho = np.hypot(x, y)
    lat = np.arctan2(z, rho * (1.0 - WGS84_E2))
    for _ in range(10):
        sin_lat = np.sin(lat)
        n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        lat = np.arctan2(z + WGS84_E2 * n * sin_lat, rho)
    sin_lat = np.sin(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    if abs(np.cos(lat)) > 1e-10:
        alt = rho / np.cos(lat) - n
    else:
        alt = abs(z) - WGS84_B
    return GeoPoint(float(np.degrees(lat)), float(np.degrees(lon)), float(alt))


def ecef_to_enu_rotation(p: GeoPoint) -> np.ndarray:
    lat = np.radians(p.latitude)
    lon = np.radians(p.longitude)
    sl, cl = np.sin(lat), np.cos(lat)
    so, co = np.sin(lon), np.cos(lon)
    return np.array(
        [
            [-so, co, 0.0],
            [-sl * co, -sl * so, cl],
            [cl * co, cl * so, sl],
        ]
    )


@dataclass(frozen=True)
class EnuOrigin:
    """Tangent-plane origin. Build it with :meth:`from_geopoint`."""

    origin: GeoPoint
    ecef: np.ndarray = field(repr=False)
    rotation: np.ndarray = field(repr=False)

    @classmethod
    def from_geopoint(cls, origin: GeoPoint) -> "EnuOrigin":
        ecef = lla_to_ecef(origin)
        rot = ecef_to_enu_rotation(origin)
        ecef.flags.writeable = False
        rot.flags.writeable = False
        return cls(origin, ecef, rot)

    def ecef_to_enu(self, xyz):
        return self.rotation @ (np.asarray(xyz, dtype=float) - self.ecef)

    def enu_to_ecef(self, enu):
        return self.rotation.T @ np.asarray(enu, dtype=float) + self.ecef

    def enu_to_lla(self, enu) -> GeoPoint:
        return ecef_to_lla(self.enu_to_ecef(enu))


def lla_to_enu(p: GeoPoint, origin: EnuOrigin | None) -> np.ndarray:
    if origin is None:
        raise StateError("ENU origin has not been initialized")
    return origin.ecef_to_enu(lla_to_ecef(p))


def pressure_to_height(pressure, reference_pressure, slope=DEFAULT_BARO_SLOPE):
    """Height above the level where ``reference_pressure`` was read.

    Linear model ``h = (p_ref - p) * slope``; valid over the few hundred meters
    a ground robot sees.
    """
    if pressure <= 0 or reference_pressure <= 0:
        raise DomainError("pressures must be positive")
    return (reference_pressure - pressure) * slope
