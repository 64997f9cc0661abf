import math

import numpy as np
import pytest
from geographiclib.geodesic import Geodesic
from hypothesis import given
from hypothesis import strategies as st

from posefusion.errors import DomainError, StateError
from posefusion.geodesy import (
    DEFAULT_BARO_SLOPE,
    WGS84_A,
    WGS84_B,
    EnuOrigin,
    GeoPoint,
    ecef_to_lla,
    lla_to_ecef,
    lla_to_enu,
    pressure_to_height,
)

# closed-form geodetic -> ECEF evaluated at 40 digits with mpmath, outside this package
HK_ECEF = (-2420173.1710849327502, 5385129.5285352480008, 2405184.7313014417627)
# meridian arc from 0 to 1e-5 deg latitude, mpmath quadrature of a(1-e^2)/(1-e^2 sin^2)^(3/2)
ARC_1E5_DEG = 1.1057427582159437275


def test_equator_prime_meridian():
    np.testing.assert_allclose(lla_to_ecef(GeoPoint(0, 0, 0)), [WGS84_A, 0, 0], atol=1e-9)


def test_pole_lies_on_semi_minor_axis():
    x = lla_to_ecef(GeoPoint(90, 0, 0))
    np.testing.assert_allclose(x, [0, 0, WGS84_B], atol=1e-6)
    assert WGS84_B == pytest.approx(6356752.314245179, abs=1e-6)


def test_frozen_hong_kong_point():
    np.testing.assert_allclose(lla_to_ecef(GeoPoint(22.3, 114.2, 10)), HK_ECEF, rtol=0, atol=1e-6)


@pytest.mark.parametrize("lat,lon", [(91, 0), (-90.5, 0), (0, 180.1), (0, -181), (float("nan"), 0)])
def test_out_of_range_rejected(lat, lon):
    with pytest.raises(DomainError):
        GeoPoint(lat, lon, 0)


def test_origin_maps_to_zero():
    o = EnuOrigin.from_geopoint(GeoPoint(22.3, 114.2, 10))
    np.testing.assert_allclose(lla_to_enu(GeoPoint(22.3, 114.2, 10), o), 0, atol=1e-9)


def test_meridian_step_matches_arc_length():
    o = EnuOrigin.from_geopoint(GeoPoint(0, 0, 0))
    e, n, u = lla_to_enu(GeoPoint(1e-5, 0, 0), o)
    assert abs(e) < 1e-9
    assert n == pytest.approx(ARC_1E5_DEG, abs=1e-3)
    assert n == pytest.approx(1.1057, abs=1e-3)
    assert abs(u) < 1e-6


def test_pure_altitude_is_up():
    o = EnuOrigin.from_geopoint(GeoPoint(0, 0, 0))
    np.testing.assert_allclose(lla_to_enu(GeoPoint(0, 0, 5), o), [0, 0, 5], atol=1e-9)


def test_uninitialized_origin():
    with pytest.raises(StateError):
        lla_to_enu(GeoPoint(0, 0, 0), None)


def test_rotation_orthonormal():
    R = EnuOrigin.from_geopoint(GeoPoint(-33.9, 151.2, 40)).rotation
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@given(
    st.floats(-89, 89), st.floats(-179, 179), st.floats(-100, 3000),
    st.tuples(*[st.floats(-7000, 7000)] * 3),
)
def test_enu_round_trip(lat, lon, alt, v):
    o = EnuOrigin.from_geopoint(GeoPoint(lat, lon, alt))
    v = np.array(v)
    np.testing.assert_allclose(o.ecef_to_enu(o.enu_to_ecef(v)), v, atol=1e-9)


@given(st.floats(-80, 80), st.floats(-179, 179), st.floats(-500, 5000))
def test_ecef_lla_round_trip(lat, lon, alt):
    g = ecef_to_lla(lla_to_ecef(GeoPoint(lat, lon, alt)))
    assert g.latitude == pytest.approx(lat, abs=1e-9)
    assert g.longitude == pytest.approx(lon, abs=1e-9)
    assert g.altitude == pytest.approx(alt, abs=1e-6)


@given(
    st.floats(-70, 70), st.floats(-179, 179),
    st.floats(0, 360), st.floats(5, 100),
)
def test_local_isometry_against_geographiclib(lat, lon, azimuth, dist):
    geod = Geodesic.WGS84
    d = geod.Direct(lat, lon, azimuth, dist)
    o = EnuOrigin.from_geopoint(GeoPoint(lat, lon, 0))
    enu = lla_to_enu(GeoPoint(d["lat2"], d["lon2"], 0), o)
    # within 100 m the chord and the geodesic differ by far less than 0.1%
    assert np.linalg.norm(enu) == pytest.approx(dist, rel=1e-3)
    assert np.linalg.norm(enu) == pytest.approx(dist, abs=1e-4)
    bearing = math.degrees(math.atan2(enu[0], enu[1])) % 360
    assert min(abs(bearing - azimuth), 360 - abs(bearing - azimuth)) < 1e-3


def test_pressure_examples():
    assert pressure_to_height(101325, 101325) == 0.0
    assert pressure_to_height(101225, 101325) == pytest.approx(8.3243153250645134, abs=1e-12)
    assert pressure_to_height(101425, 101325) == pytest.approx(-8.3243153250645134, abs=1e-12)
    assert DEFAULT_BARO_SLOPE == pytest.approx(1 / 12.013)


@pytest.mark.parametrize("p,ref", [(0, 101325), (-5, 101325), (101325, 0)])
def test_pressure_domain(p, ref):
    with pytest.raises(DomainError):
        pressure_to_height(p, ref)


@given(st.floats(50000, 110000), st.floats(50000, 110000), st.floats(-500, 500))
def test_pressure_affine(p1, p2, shift):
    ref = 101325.0
    a = pressure_to_height(p1, ref) - pressure_to_height(p2, ref)
    b = pressure_to_height(p1 + shift, ref) - pressure_to_height(p2 + shift, ref)
    assert a == pytest.approx(b, abs=1e-8)
