"""Trajectory metrics: association, Horn alignment, ATE RMSE and KITTI-style RPE."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, EvaluationError
from .manifold import Pose, quat_boxminus, quat_conj, quat_mul, quat_rotate, quat_to_matrix

DEFAULT_RPE_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


@dataclass
class Trajectory:
    timestamps: np.ndarray
    positions: np.ndarray
    orientations: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.orientations = np.asarray(self.orientations, dtype=float).reshape(-1, 4)
        n = len(self.timestamps)
        if len(self.positions) != n or len(self.orientations) != n:
            raise ValueError("trajectory arrays differ in length")
        if n > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.timestamps)

    def pose(self, k) -> Pose:
        return Pose(self.positions[k], self.orientations[k])

    def poses(self):
        return [self.pose(k) for k in range(len(self))]

    @classmethod
    def from_poses(cls, timestamps, poses):
        return cls(
            timestamps,
            np.array([p.position for p in poses]).reshape(-1, 3),
            np.array([p.orientation for p in poses]).reshape(-1, 4),
        )

    def transformed(self, T: Pose) -> "Trajectory":
        """Apply a rigid world transform to every pose."""
        q = np.broadcast_to(T.orientation, self.orientations.shape)
        return Trajectory(
            self.timestamps.copy(),
            T.position + quat_rotate(q, self.positions),
            quat_mul(q, self.orientations),
        )

    def subset(self, idx):
        return Trajectory(self.timestamps[idx], self.positions[idx], self.orientations[idx])

    def path_lengths(self):
        steps = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])


def associate(est: Trajectory, gt: Trajectory, max_dt=0.02):
    """Nearest-timestamp pairs ``(i_est, i_gt)``; each gt sample used at most once."""
    if len(est) == 0 or len(gt) == 0:
        raise EvaluationError("cannot associate an empty trajectory")
    tg = gt.timestamps
    used = np.zeros(len(gt), dtype=bool)
    pairs = []
    for i, t in enumerate(est.timestamps):
        k = int(np.searchsorted(tg, t))
        cands = [j for j in (k - 1, k) if 0 <= j < len(tg) and not used[j]]
        if not cands:
            continue
        j = min(cands, key=lambda j: (abs(tg[j] - t), j))
        if abs(tg[j] - t) <= max_dt + 1e-12:
            used[j] = True
            pairs.append((i, j))
    if not pairs:
        raise EvaluationError(f"no timestamp pairs within {max_dt} s")
    return np.array(pairs, dtype=np.intp)


@dataclass
class Alignment:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def apply(self, pts):
        return self.scale * np.asarray(pts) @ self.rotation.T + self.translation

    def as_pose(self):
        return Pose.from_matrix(np.block([[self.rotation, self.translation[:, None]], [np.zeros((1, 3)), np.ones((1, 1))]]))


def horn_align(est, gt, with_scale=False, allow_degenerate=False) -> Alignment:
    """Closed-form absolute orientation (unit-quaternion form).

    Minimizes ``sum |gt_i - (s R est_i + t)|^2``. With ``allow_degenerate`` a
    collinear set still yields one of the equally optimal rotations.
    """
    est = np.asarray(est, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if est.shape != gt.shape:
        raise AlignmentError("point sets differ in size")
    n = len(est)
    if n == 0 or (n < 3 and not allow_degenerate):
        raise AlignmentError(f"need at least 3 point pairs, got {n}")
    mu_e = est.mean(axis=0)
    mu_g = gt.mean(axis=0)
    a = est - mu_e
    b = gt - mu_g
    sv = np.linalg.svd(a, compute_uv=False)
    if not allow_degenerate and (sv[0] == 0 or sv[1] <= 1e-9 * sv[0]):
        raise AlignmentError("degenerate (collinear) point configuration")

    S = a.T @ b
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array(
        [
            [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
            [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
            [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
            [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
        ]
    )
    _, vecs = np.linalg.eigh(N)
    q = vecs[:, -1]
    R = quat_to_matrix(q / np.linalg.norm(q))
    s = 1.0
    if with_scale:
        denom = float(np.sum(a * a))
        if denom == 0:
            raise AlignmentError("cannot estimate scale of a single point")
        s = float(np.sum(b * (a @ R.T))) / denom
    t = mu_g - s * R @ mu_e
    return Alignment(R, t, s)


def ate_rmse(est: Trajectory, gt: Trajectory, max_dt=0.02, with_scale=False):
    pairs = associate(est, gt, max_dt)
    pe = est.positions[pairs[:, 0]]
    pg = gt.positions[pairs[:, 1]]
    al = horn_align(pe, pg, with_scale=with_scale, allow_degenerate=True)
    err = pg - al.apply(pe)
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


@dataclass
class MetricReport:
    ate_rmse: float
    pairs: int
    rpe: dict = field(default_factory=dict)  # length -> {"trans_pct", "rot_deg_per_100m", "count"}
    rpe_empty: bool = False

    def rpe_means(self):
        used = [v for v in self.rpe.values() if v["count"] > 0]
        if not used:
            return float("nan"), float("nan")
        return (
            float(np.mean([v["trans_pct"] for v in used])),
            float(np.mean([v["rot_deg_per_100m"] for v in used])),
        )

    def as_items(self):
        items = [("ate_rmse_m", self.ate_rmse), ("pairs", self.pairs)]
        t, r = self.rpe_means()
        items += [("rpe_trans_pct", t), ("rpe_rot_deg_per_100m", r), ("rpe_empty", self.rpe_empty)]
        for L in sorted(self.rpe):
            v = self.rpe[L]
            items += [
                (f"rpe_{L:g}_trans_pct", v["trans_pct"]),
                (f"rpe_{L:g}_rot_deg_per_100m", v["rot_deg_per_100m"]),
                (f"rpe_{L:g}_count", v["count"]),
            ]
        return items


def rpe(est: Trajectory, gt: Trajectory, segment_lengths=DEFAULT_RPE_LENGTHS, max_dt=0.02):
    """Relative pose error over fixed path-length segments, from every start index.

    Returns ``{L: {"trans_pct", "rot_deg_per_100m", "count"}}``; lengths the
    trajectory cannot cover report count 0 and NaN errors.
    """
    pairs = associate(est, gt, max_dt)
    e = est.subset(pairs[:, 0])
    g = gt.subset(pairs[:, 1])
    dist = g.path_lengths()
    n = len(g)
    out = {}
    for L in segment_lengths:
        L = float(L)
        if not L > 0:
            raise ValueError("segment lengths must be positive")
        ends = np.searchsorted(dist, dist + L, side="left")
        starts = np.flatnonzero(ends < n)
        if starts.size == 0:
            out[L] = {"trans_pct": float("nan"), "rot_deg_per_100m": float("nan"), "count": 0}
            continue
        ends = ends[starts]
        t_err, r_err = _segment_errors(e, g, starts, ends)
        out[L] = {
            "trans_pct": float(np.mean(t_err) / L * 100.0),
            "rot_deg_per_100m": float(np.degrees(np.mean(r_err)) / L * 100.0),
            "count": int(starts.size),
        }
    return out


def _relative(traj, i, j):
    qi = quat_conj(traj.orientations[i])
    dp = quat_rotate(qi, traj.positions[j] - traj.positions[i])
    dq = quat_mul(qi, traj.orientations[j])
    return dp, dq


def _segment_errors(e, g, i, j):
    dpe, dqe = _relative(e, i, j)
    dpg, dqg = _relative(g, i, j)
    # error pose = inv(rel_gt) * rel_est
    qgi = quat_conj(dqg)
    t = quat_rotate(qgi, dpe - dpg)
    r = np.linalg.norm(quat_boxminus(dqe, dqg), axis=-1)
    return np.linalg.norm(t, axis=-1), r


def evaluate(est: Trajectory, gt: Trajectory, segment_lengths=DEFAULT_RPE_LENGTHS, max_dt=0.02, with_scale=False):
    ate = ate_rmse(est, gt, max_dt, with_scale)
    pairs = associate(est, gt, max_dt)
    table = rpe(est, gt, segment_lengths, max_dt)
    empty = all(v["count"] == 0 for v in table.values())
    return MetricReport(ate, len(pairs), table, empty)
