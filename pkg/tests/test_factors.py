import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posefusion.errors import DomainError, NumericError
from posefusion.factors import (
    BaroFactor,
    BaroMeasurement,
    GpsFactor,
    GpsMeasurement,
    LocalFactor,
    MagFactor,
    MagMeasurement,
    MagReference,
    baro_residual,
    baro_variance,
    gps_covariance,
    gps_residual,
    huber_weight,
    local_residual,
    mag_covariance,
    mag_residual,
    odometry_covariance,
)
from posefusion.manifold import Pose, quat_exp
from posefusion.solver import factor_jacobian, numeric_jacobian

I = Pose.identity()


def yaw(a):
    return quat_exp(np.array([0, 0, a]))


def test_local_hand_example():
    z = Pose([1, 0, 0], yaw(math.pi / 2))
    r = local_residual(I, Pose([1, 0, 0], [1, 0, 0, 0]), z)
    np.testing.assert_allclose(r, [0, 0, 0, 0, 0, math.pi / 2], atol=1e-12)


def test_local_zero_at_consistent_states():
    a = Pose([1, 2, 3], quat_exp(np.array([0.1, -0.2, 0.3])))
    z = Pose([0.5, -1, 2], quat_exp(np.array([0.3, 0.1, -0.4])))
    np.testing.assert_allclose(local_residual(a, a.compose(z), z), 0, atol=1e-12)


def test_gps_residual():
    np.testing.assert_allclose(gps_residual(Pose([1, 2, 3], [1, 0, 0, 0]), GpsMeasurement([1.5, 2, 2])), [0.5, 0, -1])


def test_mag_yaw_half_turn():
    ref = MagReference([0, 1, 0])
    r = mag_residual(Pose(np.zeros(3), yaw(math.pi)), MagMeasurement([0, 1, 0]), ref)
    np.testing.assert_allclose(r, [0, 2, 0], atol=1e-12)


def test_mag_zero_at_truth_with_extrinsic():
    q = quat_exp(np.array([0.2, -0.1, 1.3]))
    ext = quat_exp(np.array([0.0, 0.05, 0.1]))
    ref = MagReference([0.1, 0.4, -0.6], ext)
    from posefusion.manifold import quat_conj, quat_rotate

    m = 42.0 * quat_rotate(ext, quat_rotate(quat_conj(q), ref.field / np.linalg.norm(ref.field)))
    np.testing.assert_allclose(mag_residual(Pose(np.zeros(3), q), MagMeasurement(m), ref), 0, atol=1e-12)


def test_mag_zero_norm_rejected():
    with pytest.raises(DomainError):
        mag_residual(I, MagMeasurement([0, 0, 0]), MagReference([0, 1, 0]))
    with pytest.raises(DomainError):
        MagFactor((0,), MagMeasurement([0, 0, 0]), MagReference([0, 1, 0]), np.eye(3))


def test_baro_residual():
    assert baro_residual(Pose([5, 5, 10], [1, 0, 0, 0]), BaroMeasurement(12.0, 1.0))[0] == pytest.approx(2.0)


def test_gps_covariance_policy():
    np.testing.assert_allclose(gps_covariance(10, 1.0), np.diag([1, 1, 4]))
    np.testing.assert_allclose(gps_covariance(5, 1.0), np.diag([4, 4, 16]))
    np.testing.assert_allclose(gps_covariance(20, 1.0), gps_covariance(10, 1.0))
    np.testing.assert_allclose(gps_covariance(None, 2.0), np.diag([4, 4, 16]))
    with pytest.raises(DomainError):
        gps_covariance(-1, 1.0)


def test_mag_covariance_policy():
    np.testing.assert_allclose(mag_covariance(2.0, 1.0, 0.1), 0.16 * np.eye(3), rtol=1e-12)
    np.testing.assert_allclose(mag_covariance(0.5, 1.0, 0.1), 0.16 * np.eye(3), rtol=1e-12)
    np.testing.assert_allclose(mag_covariance(1.0, 1.0, 0.1), 0.01 * np.eye(3), rtol=1e-12)


def test_baro_variance_policy():
    assert baro_variance([0, 2]) == pytest.approx(2.0)
    assert baro_variance([1, 2, 3, 4, 5]) == pytest.approx(2.5)
    assert baro_variance([3, 3, 3]) == pytest.approx(1e-4)
    assert baro_variance([7]) == 1.0


def test_odometry_covariance_grows_with_step():
    small = odometry_covariance(Pose([0.1, 0, 0], [1, 0, 0, 0]))
    big = odometry_covariance(Pose([10, 0, 0], yaw(0.5)))
    assert np.all(np.diag(big) > np.diag(small))
    assert small[0, 0] == pytest.approx((0.01 + 0.001) ** 2)


@given(st.floats(0.1, 5), st.floats(0, 100))
def test_huber_continuity_and_shape(delta, s):
    rho, d = huber_weight(s, delta)
    d2 = delta * delta
    if s <= d2:
        assert rho == pytest.approx(s) and d == 1.0
    else:
        assert rho == pytest.approx(2 * delta * math.sqrt(s) - d2)
        assert d == pytest.approx(delta / math.sqrt(s))
        assert rho <= s
    assert huber_weight(d2, delta)[0] == pytest.approx(d2)


def test_huber_example():
    assert huber_weight(4.0, 1.0)[0] == pytest.approx(3.0)
    assert huber_weight(4 * 0.25, 0.5)[0] == pytest.approx(3 * 0.25)


def test_factor_validation():
    with pytest.raises(NumericError):
        GpsFactor((0,), GpsMeasurement([0, 0, 0]), np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(NumericError):
        GpsFactor((0,), GpsMeasurement([0, 0, 0]), np.array([[1.0, 0.5, 0], [0, 1, 0], [0, 0, 1]]))
    with pytest.raises(DomainError):
        GpsFactor((0,), GpsMeasurement([0, 0, 0]), np.eye(3), huber_delta=0.0)
    with pytest.raises(DomainError):
        GpsMeasurement([np.nan, 0, 0])
    with pytest.raises(DomainError):
        BaroMeasurement(1.0, 0.0)
    with pytest.raises(ValueError):
        LocalFactor((0,), I, np.eye(6))


def test_whitener_is_lower_triangular_square_root():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 6))
    cov = A @ A.T + 0.5 * np.eye(6)
    W = LocalFactor((0, 1), I, cov).whitener()
    np.testing.assert_array_equal(W, np.tril(W))
    np.testing.assert_allclose(W.T @ W, np.linalg.inv(cov), rtol=1e-9, atol=1e-12)


def _random_pose(rng, scale=5.0):
    return Pose(rng.normal(scale=scale, size=3), rng.normal(size=4))


def _factors(rng):
    cov6 = np.diag(rng.uniform(0.01, 1, 6))
    yield LocalFactor((0, 1), _random_pose(rng), cov6), 2
    yield GpsFactor((0,), GpsMeasurement(rng.normal(size=3)), np.diag([1.0, 1.0, 4.0]), 1.0), 1
    ref = MagReference(rng.normal(size=3), quat_exp(rng.normal(scale=0.1, size=3)))
    yield MagFactor((0,), MagMeasurement(rng.normal(size=3)), ref, 0.01 * np.eye(3)), 1
    yield BaroFactor((0,), BaroMeasurement(rng.normal(), 0.3)), 1


@pytest.mark.parametrize("seed", range(5))
def test_analytic_matches_numeric(seed):
    rng = np.random.default_rng(seed)
    for f, arity in _factors(rng):
        poses = [_random_pose(rng) for _ in range(arity)]
        _, Ja = factor_jacobian(f, poses)
        Jn = numeric_jacobian(f, poses)
        for a, n in zip(Ja, Jn):
            np.testing.assert_allclose(a, n, rtol=1e-5, atol=1e-6 * max(1.0, np.abs(n).max()))


def test_gps_jacobian_exact():
    f = GpsFactor((0,), GpsMeasurement([1, 2, 3]), np.eye(3))
    _, (J,) = f.jacobians(Pose([0.3, 0.1, 0.2], yaw(0.4)))
    (Jn,) = numeric_jacobian(f, [Pose([0.3, 0.1, 0.2], yaw(0.4))], whiten=False)
    np.testing.assert_allclose(J, Jn, atol=1e-8)
