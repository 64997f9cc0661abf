"""Residual factors binding graph nodes to measurements, plus covariance policies.

Each factor class exposes a vectorized kernel ``evaluate(meas, P, Q, jac)``
over a stacked group of factors of the same type. ``P`` has shape
``(N, arity, 3)`` and ``Q`` ``(N, arity, 4)``; the kernel returns raw
(unwhitened) residuals ``(N, dim)`` and, when asked, Jacobians
``(N, dim, 6 * arity)``: columns ``6k:6k+6`` are the derivative with respect
to the ``[dp, dtheta]`` tangent of the k-th bound node (see :func:`posefusion.manifold.pose_boxplus`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DomainError, NumericError
from .manifold import (
    Pose,
    quat_conj,
    quat_log,
    quat_mul,
    quat_rotate,
    quat_to_matrix,
    right_jacobian_inv,
    skew,
)

VARIANCE_FLOOR = 1e-4


# -- measurement types --------------------------------------------------------


@dataclass(frozen=True)
class GpsMeasurement:
    position: np.ndarray  # ENU, meters
    satellites: int | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise DomainError("GPS position must be finite")
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class MagMeasurement:
    field: np.ndarray  # sensor frame
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "field", np.asarray(self.field, dtype=float).reshape(3))


@dataclass(frozen=True)
class MagReference:
    """World (ENU) field vector and the body-to-magnetometer rotation."""

    field: np.ndarray
    body_to_sensor: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        f = np.asarray(self.field, dtype=float).reshape(3)
        if not np.linalg.norm(f) > 0:
            raise DomainError("reference magnetic field must be nonzero")
        q = np.asarray(self.body_to_sensor, dtype=float).reshape(4)
        object.__setattr__(self, "field", f)
        object.__setattr__(self, "body_to_sensor", q / np.linalg.norm(q))


@dataclass(frozen=True)
class BaroMeasurement:
    height: float  # meters relative to the barometer datum
    variance: float
    timestamp: float = 0.0

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError("barometer variance must be positive")


# -- covariance policies ------------------------------------------------------


def odometry_covariance(z: Pose, sigma_trans=0.01, trans_fraction=0.01, sigma_rot=0.001, rot_fraction=0.01):
    """Unified covariance for a relative odometry step without its own covariance."""
    step = float(np.linalg.norm(z.position))
    angle = z.rotation_angle()
    st = sigma_trans + trans_fraction * step
    sr = sigma_rot + rot_fraction * angle
    return np.diag([st * st] * 3 + [sr * sr] * 3)


def gps_covariance(satellite_count, base_sigma, reference_count=10):
    if satellite_count is None:
        satellite_count = reference_count
    if satellite_count < 0:
        raise DomainError("satellite count must be nonnegative")
    scale = reference_count / satellite_count if satellite_count > 0 else np.inf
    # zero satellites is a fix of unknown quality; cap rather than go infinite
    sigma = base_sigma * min(max(1.0, scale), 1e3)
    return np.diag([sigma**2, sigma**2, (2.0 * sigma) ** 2])


def mag_covariance(measured_norm, reference_norm, base_sigma):
    if measured_norm <= 0 or reference_norm <= 0:
        raise DomainError("field norms must be positive")
    ratio = measured_norm / reference_norm
    sigma = base_sigma * max(1.0, ratio, 1.0 / ratio) ** 2
    return np.eye(3) * sigma**2


def baro_variance(window, default=1.0, floor=VARIANCE_FLOOR):
    w = np.asarray(window, dtype=float)
    if w.size < 2:
        return float(default)
    return float(max(np.var(w, ddof=1), floor))


def huber_weight(residual_norm_sq, delta):
    """Huber loss on a squared norm. Returns ``(rho(s), rho'(s))``."""
    s = np.asarray(residual_norm_sq, dtype=float)
    d2 = delta * delta
    inlier = s <= d2
    root = np.sqrt(np.where(inlier, 1.0, s))
    loss = np.where(inlier, s, 2.0 * delta * root - d2)
    deriv = np.where(inlier, 1.0, delta / root)
    if loss.ndim == 0:
        return float(loss), float(deriv)
    return loss, deriv


# -- factor classes -----------------------------------------------------------


class Factor:
    """A residual over one or two nodes with Gaussian covariance and optional Huber loss."""

    kind: ClassVar[str] = ""
    dim: ClassVar[int] = 0
    arity: ClassVar[int] = 1

    nodes: tuple
    covariance: np.ndarray
    huber_delta: float | None

    def _check(self):
        cov = np.array(self.covariance, dtype=float).reshape(self.dim, self.dim)
        if np.any(np.abs(cov - cov.T) > 1e-12 * np.max(np.abs(cov))):
            raise NumericError(f"{self.kind} covariance is not symmetric")
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"{self.kind} covariance is not positive definite") from exc
        cov.flags.writeable = False
        object.__setattr__(self, "covariance", cov)
        W = solve_triangular(L, np.eye(self.dim), lower=True, check_finite=False)
        object.__setattr__(self, "_whitener", np.tril(W))
        object.__setattr__(self, "nodes", tuple(int(n) for n in self.nodes))
        if len(self.nodes) != self.arity:
            raise ValueError(f"{self.kind} factor binds {self.arity} node(s)")
        delta = np.nan if self.huber_delta is None else float(self.huber_delta)
        if not (np.isnan(delta) or delta > 0):
            raise DomainError("huber_delta must be positive")
        # measurement payload, whitener and delta in one row for fast stacking
        row = np.concatenate([self._payload(), self._whitener.ravel(), [delta]])
        row.flags.writeable = False
        object.__setattr__(self, "_row", row)

    def _payload(self):
        raise NotImplementedError

    @classmethod
    def _unpack(cls, rows):
        raise NotImplementedError

    @classmethod
    def stack(cls, factors):
        """Measurement arrays of ``factors`` keyed for :meth:`evaluate`."""
        return cls.stack_rows(np.array([f._row for f in factors]))[0]

    @classmethod
    def stack_rows(cls, rows):
        """Split packed rows into ``(measurements, whiteners, deltas)``."""
        d = cls.dim
        k = rows.shape[1] - d * d - 1
        return cls._unpack(rows[:, :k]), rows[:, k:k + d * d].reshape(-1, d, d), rows[:, -1]

    @staticmethod
    def evaluate(meas, P, Q, jac):
        raise NotImplementedError

    def _single(self, poses, jac):
        if len(poses) != self.arity:
            raise ValueError(f"{self.kind} factor needs {self.arity} pose(s)")
        P = np.stack([p.position for p in poses])[None]
        Q = np.stack([p.orientation for p in poses])[None]
        return self.evaluate(self.stack([self]), P, Q, jac)

    def residual(self, *poses):
        r, _ = self._single(poses, False)
        return r[0]

    def jacobians(self, *poses):
        """Raw residual and per-node Jacobian blocks at ``poses``."""
        r, J = self._single(poses, True)
        return r[0], [J[0, :, 6 * k:6 * k + 6] for k in range(self.arity)]

    def whitener(self):
        """``W`` with ``W^T W = covariance^-1``."""
        return self._whitener


@dataclass(frozen=True, eq=False)
class LocalFactor(Factor):
    kind: ClassVar[str] = "local"
    dim: ClassVar[int] = 6
    arity: ClassVar[int] = 2

    nodes: tuple
    measurement: Pose
    covariance: np.ndarray
    huber_delta: float | None = None

    def __post_init__(self):
        self._check()

    def _payload(self):
        return np.concatenate([self.measurement.position, self.measurement.orientation])

    @classmethod
    def _unpack(cls, rows):
        dq = np.ascontiguousarray(rows[:, 3:7])
        return {
            "dp": np.ascontiguousarray(rows[:, :3]),
            "dq": dq,
            "MT": np.ascontiguousarray(np.swapaxes(quat_to_matrix(dq), 1, 2)),
        }

    @staticmethod
    def evaluate(meas, P, Q, jac):
        pi, pj = P[:, 0], P[:, 1]
        qi, qj = Q[:, 0], Q[:, 1]
        Ri = quat_to_matrix(qi)
        v = np.einsum("nji,nj->ni", Ri, pj - pi)
        err = quat_mul(quat_conj(qj), quat_mul(qi, meas["dq"]))
        rot = quat_log(err)
        r = np.concatenate([meas["dp"] - v, rot], axis=1)
        if not jac:
            return r, None
        n = r.shape[0]
        J = np.zeros((n, 6, 12))
        RiT = np.swapaxes(Ri, 1, 2)
        J[:, :3, 0:3] = RiT
        J[:, :3, 3:6] = -skew(v)
        J[:, :3, 6:9] = -RiT
        Jinv = right_jacobian_inv(rot)
        J[:, 3:, 3:6] = Jinv @ meas["MT"]
        J[:, 3:, 9:12] = -np.swapaxes(Jinv, 1, 2)  # Jr^-1(-phi) == Jr^-1(phi)^T
        return r, J


@dataclass(frozen=True, eq=False)
class GpsFactor(Factor):
    kind: ClassVar[str] = "gps"
    dim: ClassVar[int] = 3
    arity: ClassVar[int] = 1

    nodes: tuple
    measurement: GpsMeasurement
    covariance: np.ndarray
    huber_delta: float | None = None

    def __post_init__(self):
        self._check()

    def _payload(self):
        return self.measurement.position

    @classmethod
    def _unpack(cls, rows):
        return {"p": rows[:, :3]}

    @staticmethod
    def evaluate(meas, P, Q, jac):
        r = meas["p"] - P[:, 0]
        if not jac:
            return r, None
        J = np.zeros((r.shape[0], 3, 6))
        J[:, :, :3] = -np.eye(3)
        return r, J


@dataclass(frozen=True, eq=False)
class MagFactor(Factor):
    kind: ClassVar[str] = "mag"
    dim: ClassVar[int] = 3
    arity: ClassVar[int] = 1

    nodes: tuple
    measurement: MagMeasurement
    reference: MagReference
    covariance: np.ndarray
    huber_delta: float | None = None

    def __post_init__(self):
        if not np.linalg.norm(self.measurement.field) > 0:
            raise DomainError("zero-norm magnetometer measurement rejected")
        self._check()

    def _payload(self):
        m = self.measurement.field
        w = self.reference.field
        return np.concatenate([m / np.linalg.norm(m), w / np.linalg.norm(w), self.reference.body_to_sensor])

    @classmethod
    def _unpack(cls, rows):
        return {"m": rows[:, :3], "w": rows[:, 3:6], "q_mb": rows[:, 6:10]}

    @staticmethod
    def evaluate(meas, P, Q, jac):
        q = Q[:, 0]
        u = quat_rotate(quat_conj(q), meas["w"])
        pred = quat_rotate(meas["q_mb"], u)
        r = meas["m"] - pred
        if not jac:
            return r, None
        J = np.zeros((r.shape[0], 3, 6))
        J[:, :, 3:] = -quat_to_matrix(meas["q_mb"]) @ skew(u)
        return r, J


@dataclass(frozen=True, eq=False)
class BaroFactor(Factor):
    kind: ClassVar[str] = "baro"
    dim: ClassVar[int] = 1
    arity: ClassVar[int] = 1

    nodes: tuple
    measurement: BaroMeasurement
    covariance: np.ndarray = None
    huber_delta: float | None = None

    def __post_init__(self):
        if self.covariance is None:
            object.__setattr__(self, "covariance", np.array([[self.measurement.variance]]))
        self._check()

    def _payload(self):
        return np.array([self.measurement.height], dtype=float)

    @classmethod
    def _unpack(cls, rows):
        return {"h": rows[:, :1]}

    @staticmethod
    def evaluate(meas, P, Q, jac):
        r = meas["h"] - P[:, 0, 2:3]
        if not jac:
            return r, None
        J = np.zeros((r.shape[0], 1, 6))
        J[:, 0, 2] = -1.0
        return r, J


FACTOR_TYPES = (LocalFactor, GpsFactor, MagFactor, BaroFactor)


# -- single-factor residual functions -----------------------------------------


def local_residual(x_prev: Pose, x_curr: Pose, z: Pose):
    return LocalFactor((0, 1), z, np.eye(6)).residual(x_prev, x_curr)


def gps_residual(x: Pose, z: GpsMeasurement):
    return z.position - x.position


def mag_residual(x: Pose, z: MagMeasurement, ref: MagReference):
    m = z.field
    nm = np.linalg.norm(m)
    if not nm > 0:
        raise DomainError("zero-norm magnetometer measurement rejected")
    w = ref.field / np.linalg.norm(ref.field)
    pred = quat_rotate(ref.body_to_sensor, quat_rotate(quat_conj(x.orientation), w))
    return m / nm - pred


def baro_residual(x: Pose, z: BaroMeasurement):
    return np.array([z.height - x.position[2]])
