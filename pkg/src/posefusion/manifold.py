"""Quaternion and pose algebra.

Quaternions are Hamilton, scalar-first ``[w, x, y, z]`` numpy arrays. Every
function accepts stacked inputs of shape ``(..., 4)`` / ``(..., 3)`` so the
solver can evaluate whole factor groups at once.

Pose updates use a right perturbation on orientation and an additive
world-frame perturbation on position::

    boxplus((p, q), (dp, dtheta)) = (p + dp, q * exp(dtheta))
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError

_SMALL = 1e-8


def quat_canonical(q):
    """Normalize and pick the w >= 0 representative.

    For w == 0 the sign is chosen so the largest-magnitude vector component
    is positive, which makes the angle-pi logarithm deterministic.
    """
    q = np.asarray(q, dtype=float)
    q = q / np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    w = q[..., 0]
    sign = np.where(w < 0.0, -1.0, 1.0)
    zero = w == 0.0
    if np.any(zero):
        vec = q[..., 1:]
        idx = np.argmax(np.abs(vec), axis=-1)
        lead = np.take_along_axis(vec, idx[..., None], axis=-1)[..., 0]
        sign = np.where(zero, np.where(lead < 0.0, -1.0, 1.0), sign)
    return q * sign[..., None]


def quat_identity(shape=()):
    q = np.zeros(tuple(shape) + (4,))
    q[..., 0] = 1.0
    return q


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = aw * bw - ax * bx - ay * by - az * bz
    out[..., 1] = aw * bx + ax * bw + ay * bz - az * by
    out[..., 2] = aw * by - ax * bz + ay * bw + az * bx
    out[..., 3] = aw * bz + ax * by - ay * bx + az * bw
    return out


def quat_to_matrix(q):
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_from_matrix(R):
    """Rotation matrix to canonical quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for k, m in enumerate(flat):
        tr = np.trace(m)
        if tr > 0:
            s = 2.0 * np.sqrt(1.0 + tr)
            out[k] = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        else:
            i = int(np.argmax(np.diag(m)))
            j, l = (i + 1) % 3, (i + 2) % 3
            s = 2.0 * np.sqrt(1.0 + m[i, i] - m[j, j] - m[l, l])
            v = np.empty(3)
            v[i] = 0.25 * s
            v[j] = (m[j, i] + m[i, j]) / s
            v[l] = (m[l, i] + m[i, l]) / s
            out[k] = [(m[l, j] - m[j, l]) / s, *v]
    return quat_canonical(out.reshape(R.shape[:-2] + (4,)))


def _cross(a, b):
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def quat_rotate(q, v):
    """Rotate vector(s) ``v`` by quaternion(s) ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * _cross(u, v)
    return v + w * t + _cross(u, t)


def quat_exp(phi):
    """Rotation vector to unit quaternion."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < _SMALL
    safe = np.where(small, 1.0, theta)
    k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), k * phi], axis=-1)


def quat_log(q):
    """Unit quaternion to rotation vector with norm in [0, pi]."""
    q = quat_canonical(q)
    w = q[..., :1]
    v = q[..., 1:]
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    small = n < _SMALL
    safe_n = np.where(small, 1.0, n)
    safe_w = np.where(small, w, 1.0)
    k = np.where(
        small,
        2.0 / safe_w * (1.0 - n * n / (3.0 * safe_w * safe_w)),
        2.0 * np.arctan2(n, w) / safe_n,
    )
    return k * v


def quat_boxminus(a, b):
    """Error-state difference ``log(b^-1 * a)`` as a rotation vector."""
    return quat_log(quat_mul(quat_conj(b), a))


def skew(v):
    v = np.asarray(v, dtype=float)
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1] = -v[..., 2]
    K[..., 0, 2] = v[..., 1]
    K[..., 1, 0] = v[..., 2]
    K[..., 1, 2] = -v[..., 0]
    K[..., 2, 0] = -v[..., 1]
    K[..., 2, 1] = v[..., 0]
    return K


def right_jacobian_inv(phi):
    """Inverse right Jacobian of SO(3); the left one is ``right_jacobian_inv(-phi)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    K = skew(phi)
    small = theta < 1e-5
    safe = np.where(small, 1.0, theta)
    coef = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    return np.eye(3) + 0.5 * K + coef * (K @ K)


# -- scalar helpers for single poses (numpy overhead dominates at size 4) -----


def _canon1(w, x, y, z):
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if w < 0.0 or (w == 0.0 and _lead1(x, y, z) < 0.0):
        n = -n
    return w / n, x / n, y / n, z / n


def _lead1(x, y, z):
    ax, ay, az = abs(x), abs(y), abs(z)
    if ay > ax and ay >= az:
        return y
    if az > ax and az > ay:
        return z
    return x


def _qmul1(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def _qrot1(q, v):
    w, ux, uy, uz = q
    vx, vy, vz = v
    tx = 2.0 * (uy * vz - uz * vy)
    ty = 2.0 * (uz * vx - ux * vz)
    tz = 2.0 * (ux * vy - uy * vx)
    return (
        vx + w * tx + (uy * tz - uz * ty),
        vy + w * ty + (uz * tx - ux * tz),
        vz + w * tz + (ux * ty - uy * tx),
    )


def _frozen(values):
    a = np.array(values, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid pose: world-frame position and body-to-world orientation."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4).tolist()
        if not all(math.isfinite(c) for c in q) or not np.all(np.isfinite(p)):
            raise ValueError("pose entries must be finite")
        if q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3] == 0.0:
            raise ValueError("orientation quaternion must be nonzero")
        p.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", _frozen(_canon1(*q)))

    @classmethod
    def trusted(cls, position, orientation):
        """Skip validation; ``orientation`` must already be canonical and unit."""
        obj = object.__new__(cls)
        position.flags.writeable = False
        orientation.flags.writeable = False
        object.__setattr__(obj, "position", position)
        object.__setattr__(obj, "orientation", orientation)
        return obj

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), quat_identity())

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3], quat_from_matrix(T[:3, :3]))

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.orientation)
        T[:3, 3] = self.position
        return T

    def inverse(self):
        w, x, y, z = self.orientation.tolist()
        qi = (w, -x, -y, -z)
        p = _qrot1(qi, self.position.tolist())
        return Pose.trusted(_frozen([-p[0], -p[1], -p[2]]), _frozen(_canon1(*qi)))

    def compose(self, other):
        q = self.orientation.tolist()
        d = _qrot1(q, other.position.tolist())
        a = self.position.tolist()
        return Pose.trusted(
            _frozen([a[0] + d[0], a[1] + d[1], a[2] + d[2]]),
            _frozen(_canon1(*_qmul1(q, other.orientation.tolist()))),
        )

    __matmul__ = compose

    def rotation_angle(self):
        """Angle of the orientation in [0, pi]."""
        w, x, y, z = self.orientation.tolist()
        return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), w)

    def transform_point(self, v):
        return self.position + quat_rotate(self.orientation, v)

    def __repr__(self):
        return f"Pose(p={self.position.tolist()}, q={self.orientation.tolist()})"


def pose_boxplus(x, d):
    """Retraction used by the optimizer. ``d`` is ``[dp(3), dtheta(3)]``."""
    d = np.asarray(d, dtype=float)
    return Pose(x.position + d[:3], quat_mul(x.orientation, quat_exp(d[3:])))


def pose_boxminus(a, b):
    """Inverse of :func:`pose_boxplus`: ``d`` with ``boxplus(b, d) == a``."""
    return np.concatenate([a.position - b.position, quat_boxminus(a.orientation, b.orientation)])


def relative_pose(a, b):
    """Pose of ``b`` expressed in the frame of ``a``."""
    w, x, y, z = a.orientation.tolist()
    qi = (w, -x, -y, -z)
    pa, pb = a.position.tolist(), b.position.tolist()
    d = _qrot1(qi, (pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]))
    return Pose.trusted(_frozen(d), _frozen(_canon1(*_qmul1(qi, b.orientation.tolist()))))


def mahalanobis_sq(r, omega):
    """``r^T omega^-1 r``; raises :class:`NumericError` unless omega is SPD."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    if omega.shape != (r.size, r.size) or not np.allclose(omega, omega.T, rtol=1e-12, atol=0.0):
        raise NumericError("covariance must be a symmetric matrix matching the residual")
    try:
        L = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise NumericError("covariance is not positive definite") from exc
    y = np.linalg.solve(L, r)
    return float(y @ y)


def yaw_of(q):
    """Heading about the world Up axis, from the rotated body x axis."""
    fwd = quat_rotate(q, np.array([1.0, 0.0, 0.0]))
    return np.arctan2(fwd[..., 1], fwd[..., 0])


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi
