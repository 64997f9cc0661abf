import numpy as np
import pytest

from posefusion.errors import ConfigError
from posefusion.evaluation import ate_rmse
from posefusion.factors import MagMeasurement, MagReference, mag_residual
from posefusion.manifold import quat_exp, yaw_of, wrap_angle
from posefusion.simulate import SHAPES, Scenario, generate_gps, generate_mag, generate_truth, simulate


def test_straight_line_sampling():
    tr = generate_truth(Scenario(shape="straight", path_length=10, speed=1, rate=10))
    assert len(tr) == 101
    np.testing.assert_allclose(tr.positions[-1], [10, 0, 0], atol=1e-9)
    np.testing.assert_allclose(np.diff(tr.timestamps), 0.1, atol=1e-12)


@pytest.mark.parametrize("shape", SHAPES)
def test_shapes_have_requested_length(shape):
    wp = [(0, 0, 0), (100, 0, 0), (100, 80, 5), (20, 120, 5)]
    sc = Scenario(shape=shape, path_length=300, waypoints=wp if shape == "waypoints" else [])
    tr = generate_truth(sc)
    L = tr.path_lengths()[-1]
    if shape == "waypoints":
        assert L == pytest.approx(100 + np.hypot(80, 5) + np.hypot(80, 40), rel=1e-3)
    else:
        assert L == pytest.approx(300, rel=0.02)
    assert np.all(np.diff(tr.timestamps) > 0)


def test_yaw_bias_heading_error():
    beta, speed, L = 0.01, 10.0, 200.0
    sc = Scenario(shape="straight", path_length=L, speed=speed, odom_trans_fraction=0,
                  odom_sigma_yaw=0, odom_yaw_bias=beta, gps_enabled=False)
    st = simulate(sc, 0)
    err = wrap_angle(yaw_of(st.odometry.orientations[-1]) - yaw_of(st.truth.orientations[-1]))
    assert err == pytest.approx(beta * L / speed, rel=1e-9)


def test_gps_noise_statistics():
    sc = Scenario(shape="straight", path_length=10000, speed=10, gps_rate=10, gps_sigma=0.5)
    tr = generate_truth(sc)
    rows = generate_gps(tr, sc, 1)
    assert len(rows) >= 10000
    err = rows[:, 1:4] - tr.positions[: len(rows)]
    std = err.std(axis=0)
    np.testing.assert_allclose(std, [0.5, 0.5, 1.0], rtol=0.05)
    assert np.all((rows[:, 4] >= 10) & (rows[:, 4] <= 14))


def test_gps_full_dropout_is_empty():
    sc = Scenario(shape="straight", path_length=100, gps_dropout=1.0)
    assert generate_gps(generate_truth(sc), sc, 0).shape == (0, 5)


def test_mag_model_at_quarter_turn():
    sc = Scenario(shape="straight", path_length=10, heading=np.pi / 2, mag_enabled=True, mag_sigma=0.0,
                  mag_field=(0.0, 1.0, 0.0))
    rows = generate_mag(generate_truth(sc), sc, 0)
    # facing north, the field lies along body x
    np.testing.assert_allclose(rows[0, 1:], [1, 0, 0], atol=1e-12)


def test_noise_free_residuals_vanish():
    sc = Scenario(shape="helix", path_length=200, mag_enabled=True, mag_sigma=0.0,
                  mag_body_to_sensor=tuple(quat_exp(np.array([0.05, 0.0, 0.1]))))
    st = simulate(sc, 0)
    ref = MagReference(sc.mag_field, sc.mag_body_to_sensor)
    for row, k in zip(st.mag[:50], range(50)):
        r = mag_residual(st.truth.pose(k), MagMeasurement(row[1:]), ref)
        np.testing.assert_allclose(r, 0, atol=1e-12)


def test_seeds_reproducible_and_independent():
    sc = Scenario(shape="circle", path_length=200, mag_enabled=True, baro_enabled=True)
    a, b, c = simulate(sc, 3), simulate(sc, 3), simulate(sc, 4)
    np.testing.assert_array_equal(a.odometry.positions, b.odometry.positions)
    np.testing.assert_array_equal(a.gps, b.gps)
    assert not np.array_equal(a.gps, c.gps)
    # disabling a sensor does not perturb the other streams
    d = simulate(Scenario(shape="circle", path_length=200), 3)
    np.testing.assert_array_equal(a.gps, d.gps)
    np.testing.assert_array_equal(a.odometry.positions, d.odometry.positions)


def test_odometry_drift_grows_with_length():
    means = []
    for L in (200, 500, 1000):
        sc = Scenario(shape="circle", path_length=L, gps_enabled=False)
        means.append(np.mean([ate_rmse(simulate(sc, s).odometry, simulate(sc, s).truth) for s in range(10)]))
    assert means[0] < means[1] < means[2]


@pytest.mark.parametrize("kw", [dict(shape="square"), dict(rate=0), dict(gps_sigma=-1), dict(gps_dropout=1.5), dict(gps_frame="ecef")])
def test_invalid_scenarios(kw):
    with pytest.raises(ConfigError):
        Scenario(**kw)
