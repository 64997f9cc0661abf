import numpy as np
import pytest

from posefusion.errors import AlignmentError, EvaluationError
from posefusion.evaluation import Trajectory, associate, ate_rmse, evaluate, horn_align, rpe
from posefusion.manifold import Pose, quat_exp, quat_to_matrix


def line_traj(n=101, step=1.0, dt=0.1, t0=0.0):
    t = t0 + dt * np.arange(n)
    P = np.column_stack([step * np.arange(n), np.zeros(n), np.zeros(n)])
    return Trajectory(t, P, np.tile([1.0, 0, 0, 0], (n, 1)))


def traj_from_points(t, P):
    return Trajectory(np.asarray(t, float), np.asarray(P, float), np.tile([1.0, 0, 0, 0], (len(t), 1)))


def random_transform(rng):
    R = quat_to_matrix(quat_exp(rng.normal(size=3)))
    return R, rng.normal(scale=10, size=3)


def test_associate_nearest_within_tolerance():
    est = traj_from_points([0.0, 1.0], np.zeros((2, 3)))
    gt = traj_from_points([0.01, 0.99], np.zeros((2, 3)))
    np.testing.assert_array_equal(associate(est, gt, 0.02), [[0, 0], [1, 1]])
    with pytest.raises(EvaluationError):
        associate(est, traj_from_points([0.5], np.zeros((1, 3))), 0.02)


def test_associate_uses_each_gt_once():
    est = traj_from_points([0.0, 0.001], np.zeros((2, 3)))
    gt = traj_from_points([0.0], np.zeros((1, 3)))
    assert len(associate(est, gt, 0.02)) == 1


def test_horn_recovers_random_transforms():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pts = rng.normal(scale=20, size=(30, 3))
        R, t = random_transform(rng)
        a = horn_align(pts, pts @ R.T + t)
        np.testing.assert_allclose(a.rotation, R, atol=1e-10)
        np.testing.assert_allclose(a.translation, t, atol=1e-10)


def test_horn_with_scale():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(20, 3))
    R, t = random_transform(rng)
    a = horn_align(pts, 2.5 * pts @ R.T + t, with_scale=True)
    assert a.scale == pytest.approx(2.5, rel=1e-10)


def test_horn_noisy_is_optimal():
    rng = np.random.default_rng(2)
    pts = rng.normal(scale=5, size=(50, 3))
    R, t = random_transform(rng)
    gt = pts @ R.T + t + rng.normal(scale=0.1, size=pts.shape)
    a = horn_align(pts, gt)
    best = np.sum((gt - a.apply(pts)) ** 2)
    for _ in range(1000):
        R2 = quat_to_matrix(quat_exp(rng.normal(scale=0.05, size=3))) @ a.rotation
        t2 = a.translation + rng.normal(scale=0.05, size=3)
        assert np.sum((gt - (pts @ R2.T + t2)) ** 2) >= best


def test_horn_degenerate_inputs():
    with pytest.raises(AlignmentError):
        horn_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
    with pytest.raises(AlignmentError):
        horn_align(line, line)
    a = horn_align(line, line, allow_degenerate=True)
    np.testing.assert_allclose(a.apply(line), line, atol=1e-12)


def test_ate_two_point_example():
    est = traj_from_points([0, 1], [[0, 0, 0], [1, 0, 0]])
    gt = traj_from_points([0, 1], [[0, 0, 0], [2, 0, 0]])
    assert ate_rmse(est, gt) == pytest.approx(0.5, abs=1e-12)


def test_ate_invariant_to_rigid_transform_of_estimate():
    rng = np.random.default_rng(3)
    t = np.arange(50) * 0.1
    gt = traj_from_points(t, rng.normal(scale=10, size=(50, 3)))
    est = traj_from_points(t, gt.positions + rng.normal(scale=0.3, size=(50, 3)))
    T = Pose(rng.normal(size=3), quat_exp(rng.normal(size=3)))
    assert ate_rmse(est.transformed(T), gt) == pytest.approx(ate_rmse(est, gt), rel=1e-9)
    assert ate_rmse(gt, gt) == pytest.approx(0.0, abs=1e-9)


def test_rpe_scale_error_is_one_percent():
    gt = line_traj(1001)
    est = Trajectory(gt.timestamps, 1.01 * gt.positions, gt.orientations)
    table = rpe(est, gt, (100.0, 200.0))
    for v in table.values():
        assert v["trans_pct"] == pytest.approx(1.0, rel=1e-9)
        assert v["rot_deg_per_100m"] == pytest.approx(0.0, abs=1e-12)
        assert v["count"] > 0


def test_rpe_invariant_to_global_transform():
    rng = np.random.default_rng(4)
    gt = line_traj(501)
    est = Trajectory(gt.timestamps, gt.positions + rng.normal(scale=0.2, size=(501, 3)), gt.orientations)
    T = Pose([5, -3, 2], quat_exp(np.array([0.1, 0.2, 1.0])))
    a = rpe(est, gt, (100.0,))[100.0]
    b = rpe(est.transformed(T), gt, (100.0,))[100.0]
    assert a["trans_pct"] == pytest.approx(b["trans_pct"], rel=1e-9)


def test_rpe_too_short_marks_empty():
    gt = line_traj(11)
    rep = evaluate(gt, gt, (100.0,))
    assert rep.rpe_empty
    assert rep.rpe[100.0]["count"] == 0
    assert np.isnan(rep.rpe_means()[0])
    keys = [k for k, _ in rep.as_items()]
    assert keys[:5] == ["ate_rmse_m", "pairs", "rpe_trans_pct", "rpe_rot_deg_per_100m", "rpe_empty"]


def test_rpe_rejects_nonpositive_length():
    gt = line_traj(11)
    with pytest.raises(ValueError):
        rpe(gt, gt, (0.0,))
