"""Levenberg-Marquardt over the pose manifold with a banded normal-equation solve.

The graph is a chain of local factors with unary global attachments, so the
Gauss-Newton Hessian (6x6 blocks in node order) has constant bandwidth and a
banded Cholesky solve costs O(n).
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import _accel
from .errors import GaugeError, NumericError, StateError
from .factors import LocalFactor, huber_weight
from .manifold import pose_boxplus, quat_canonical, quat_exp, quat_mul

log = logging.getLogger(__name__)

_COMPONENTS = ("px", "py", "pz", "rx", "ry", "rz")


@dataclass
class SolverOptions:
    max_iterations: int = 50
    cost_tolerance: float = 1e-8
    gradient_tolerance: float = 1e-8
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.5
    max_damping: float = 1e12
    jacobian: str = "analytic"  # or "numeric"

    def __post_init__(self):
        for name in ("cost_tolerance", "gradient_tolerance", "initial_damping", "damping_up", "damping_down"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.jacobian not in ("analytic", "numeric"):
            raise ValueError("jacobian must be 'analytic' or 'numeric'")


@dataclass
class Snapshot:
    """Immutable view of graph states and factors handed to the optimizer."""

    ids: np.ndarray
    positions: np.ndarray
    orientations: np.ndarray
    fixed: np.ndarray
    factors: list

    def index(self):
        return {int(i): k for k, i in enumerate(self.ids)}


@dataclass
class SolverReport:
    iterations: int
    initial_cost: float
    final_cost: float
    termination: str
    gradient_norm: float
    cost_history: list = field(default_factory=list)

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "termination": self.termination,
            "gradient_norm": self.gradient_norm,
        }


@dataclass
class LinearSystem:
    """Normal equations in banded upper storage (``scipy.linalg.solveh_banded`` layout)."""

    hessian: np.ndarray
    bandwidth: int
    gradient: np.ndarray
    cost: float
    free_ids: np.ndarray

    @property
    def size(self):
        return self.gradient.size

    def dense(self):
        n, u = self.size, self.bandwidth
        H = np.zeros((n, n))
        for k in range(u + 1):
            d = self.hessian[u - k, k:]
            H += np.diag(d, k)
            if k:
                H += np.diag(d, -k)
        return H


# -- per-factor linearization -------------------------------------------------


def _robustify(r, delta):
    s = float(r @ r)
    if delta is None:
        return s, 1.0
    return huber_weight(s, delta)


def factor_jacobian(factor, poses, whiten=True):
    """Residual and analytic Jacobian blocks, whitened and Huber-reweighted."""
    r, J = factor.jacobians(*poses)
    if not whiten:
        return r, J
    W = factor.whitener()
    r = W @ r
    _, w = _robustify(r, factor.huber_delta)
    k = np.sqrt(w)
    return k * r, [k * (W @ b) for b in J]


def numeric_jacobian(factor, poses, step=1e-6, whiten=True):
    """Central differences through :func:`pose_boxplus`; same weighting as the analytic path."""
    if not step > 0:
        raise ValueError("step must be positive")
    poses = list(poses)
    blocks = []
    for slot in range(len(poses)):
        J = np.zeros((factor.dim, 6))
        for c in range(6):
            d = np.zeros(6)
            d[c] = step
            plus = poses.copy()
            minus = poses.copy()
            plus[slot] = pose_boxplus(poses[slot], d)
            minus[slot] = pose_boxplus(poses[slot], -d)
            J[:, c] = (factor.residual(*plus) - factor.residual(*minus)) / (2 * step)
        blocks.append(J)
    if not whiten:
        return blocks
    W = factor.whitener()
    _, w = _robustify(W @ factor.residual(*poses), factor.huber_delta)
    k = np.sqrt(w)
    return [k * (W @ b) for b in blocks]


def numeric_jacobian_batch(cls, meas, P, Q, step=1e-6):
    """Central differences for many factors of one class at once.

    ``P`` is ``(n, arity, 3)`` and ``Q`` ``(n, arity, 4)``; returns the raw
    (unwhitened) Jacobians ``(n, dim, 6 * arity)``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    n, k = P.shape[:2]
    J = np.empty((n, cls.dim, 6 * k))
    eye = np.eye(3) * step
    for slot in range(k):
        for c in range(6):
            out = []
            for sign in (1.0, -1.0):
                Pp, Qp = P.copy(), Q.copy()
                if c < 3:
                    Pp[:, slot, c] += sign * step
                else:
                    Qp[:, slot] = quat_mul(Q[:, slot], quat_exp(sign * eye[c - 3]))
                out.append(cls.evaluate(meas, Pp, Qp, False)[0])
            J[:, :, 6 * slot + c] = (out[0] - out[1]) / (2 * step)
    return J


# -- grouped evaluation -------------------------------------------------------


class _Group:
    def __init__(self, cls, factors, ids):
        self.cls = cls
        self.factors = factors
        nodes = np.fromiter(
            itertools.chain.from_iterable(f.nodes for f in factors), np.int64, len(factors) * cls.arity
        )
        order = np.argsort(ids, kind="stable")
        sorted_ids = ids[order]
        pos = np.minimum(np.searchsorted(sorted_ids, nodes), len(ids) - 1)
        if not np.array_equal(sorted_ids[pos], nodes):
            missing = sorted(set(nodes[sorted_ids[pos] != nodes].tolist()))
            raise StateError(f"factor references node(s) absent from the snapshot: {missing[:10]}")
        pos = order[pos]
        self.idx = pos.reshape(len(factors), cls.arity).astype(np.intp)
        self.meas, self.W, self.delta = cls.stack_rows(np.array([f._row for f in factors]))
        self.W = np.ascontiguousarray(self.W)
        self.delta = np.ascontiguousarray(self.delta)
        self.robust = np.isfinite(self.delta)
        self.layout = None

    def prepare(self, fidx, u, m):
        """Precompute scatter indices into the banded Hessian and the gradient."""
        n, k = self.idx.shape
        f = fidx[self.idx]  # (n, k), -1 for fixed nodes
        ar = np.arange(6)
        g_idx = (6 * f[:, :, None] + ar).reshape(n, 6 * k)
        g_ok = np.repeat(f >= 0, 6, axis=1)
        rows = g_idx[:, :, None]
        cols = g_idx[:, None, :]
        ok = g_ok[:, :, None] & g_ok[:, None, :] & (rows <= cols)
        rows, cols = np.broadcast_arrays(rows, cols)
        self.shape = (u, m)
        self.gidx = np.where(g_ok, g_idx, -1).astype(np.int64)
        self.layout = (
            np.flatnonzero(g_ok.ravel()),
            g_idx.ravel()[g_ok.ravel()],
            np.flatnonzero(ok.ravel()),
            ((u + rows - cols) * m + cols)[ok],
        )

    def evaluate(self, P, Q, jac, numeric=False):
        if self.cls is LocalFactor and _accel.AVAILABLE and not numeric:
            n = len(self.factors)
            r = np.empty((n, 6))
            J = np.empty((n, 6, 12) if jac else (0, 6, 12))
            cost = _accel.local_linearize(
                P, Q, self.idx, self.meas["dp"], self.meas["dq"], self.meas["MT"],
                self.W, self.delta, jac, r, J,
            )
            return (cost, r, J) if jac else (cost, None, None)
        if jac and numeric:
            Pi, Qi = P[self.idx], Q[self.idx]
            r, _ = self.cls.evaluate(self.meas, Pi, Qi, False)
            J = numeric_jacobian_batch(self.cls, self.meas, Pi, Qi)
        else:
            r, J = self.cls.evaluate(self.meas, P[self.idx], Q[self.idx], jac)
        r = (self.W @ r[:, :, None])[:, :, 0]
        s = np.sum(r * r, axis=1)
        rho = s.copy()
        weight = np.ones_like(s)
        if self.robust.any():
            m = self.robust
            rho[m], weight[m] = huber_weight(s[m], self.delta[m])
        cost = float(rho.sum())
        if not jac:
            return cost, None, None
        k = np.sqrt(weight)
        r = r * k[:, None]
        J = (self.W @ J) * k[:, None, None]
        return cost, r, J


def _group_factors(factors, ids):
    order = []
    buckets = {}
    for f in factors:
        cls = type(f)
        if cls not in buckets:
            buckets[cls] = []
            order.append(cls)
        buckets[cls].append(f)
    return [_Group(cls, buckets[cls], ids) for cls in order]


def _check_reachability(snapshot, groups):
    """Every free component must touch a unary factor or a fixed node."""
    n = len(snapshot.ids)
    anchored = np.array(snapshot.fixed, dtype=bool)
    rows, cols = [], []
    for g in groups:
        if g.idx.shape[1] == 1:
            anchored[g.idx[:, 0]] = True
        else:
            for b in range(1, g.idx.shape[1]):
                rows.append(g.idx[:, 0])
                cols.append(g.idx[:, b])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        adj = coo_matrix((np.ones(r.size), (r, c)), shape=(n, n))
        _, label = connected_components(adj, directed=False)
    else:
        label = np.arange(n)
    ok = np.zeros(n, dtype=bool)
    ok[label[anchored]] = True
    bad = snapshot.ids[~np.asarray(snapshot.fixed, dtype=bool) & ~ok[label]].tolist()
    if bad:
        raise GaugeError(
            f"{len(bad)} free node(s) unconstrained by any fixed node or global factor: {bad[:10]}",
            [(i, c) for i in bad for c in _COMPONENTS],
        )


def _layout(snapshot, groups):
    fixed = np.asarray(snapshot.fixed, dtype=bool)
    fidx = np.full(len(fixed), -1, dtype=np.intp)
    fidx[~fixed] = np.arange(int((~fixed).sum()))
    m = 6 * int((~fixed).sum())
    gap = 0
    for g in groups:
        if g.idx.shape[1] > 1:
            f = fidx[g.idx]
            for a in range(f.shape[1]):
                for b in range(a + 1, f.shape[1]):
                    both = (f[:, a] >= 0) & (f[:, b] >= 0)
                    if both.any():
                        gap = max(gap, int(np.max(np.abs(f[both, a] - f[both, b]))))
    u = 6 * (gap + 1) - 1
    for g in groups:
        g.prepare(fidx, u, m)
    return u, m


def linearize(snapshot, P=None, Q=None, groups=None, numeric=False):
    """Assemble the whitened normal equations about the given states."""
    if P is None:
        P, Q = snapshot.positions, snapshot.orientations
    if groups is None:
        groups = _group_factors(snapshot.factors, snapshot.ids)
    if not groups:
        u, m = 5, 6 * int((~np.asarray(snapshot.fixed, dtype=bool)).sum())
    elif groups[0].layout is None:
        u, m = _layout(snapshot, groups)
    else:
        u, m = groups[0].shape
    width = u + 1
    hflat = np.zeros(width * m)
    grad = np.zeros(m)
    cost = 0.0
    for g in groups:
        c, r, J = g.evaluate(P, Q, True, numeric)
        cost += c
        if _accel.AVAILABLE:
            _accel.scatter(J, r, g.gidx, hflat.reshape(width, m), grad, u)
            continue
        g_sel, g_idx, h_sel, h_idx = g.layout
        JT = np.ascontiguousarray(np.swapaxes(J, 1, 2))
        grad += np.bincount(g_idx, weights=(JT @ r[:, :, None]).ravel().take(g_sel), minlength=m)
        hflat += np.bincount(h_idx, weights=(JT @ J).ravel().take(h_sel), minlength=width * m)
    fixed = np.asarray(snapshot.fixed, dtype=bool)
    return LinearSystem(hflat.reshape(width, m), u, grad, cost, snapshot.ids[~fixed])


def solve_normal_equations(system, damping):
    """Solve ``(H + damping * diag(H)) delta = -g``; returns ``(n_free, 6)``."""
    ab = system.hessian.copy()
    ab[system.bandwidth] += damping * system.hessian[system.bandwidth]
    try:
        delta = solveh_banded(ab, -system.gradient, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"normal equations not positive definite at damping {damping:g}") from exc
    if not np.all(np.isfinite(delta)):
        raise NumericError("non-finite step")
    return delta.reshape(-1, 6)


def _retract(P, Q, fixed, delta):
    P = P.copy()
    Q = Q.copy()
    if _accel.AVAILABLE:
        _accel.retract(P, Q, np.flatnonzero(~fixed), delta)
        return P, Q
    free = ~fixed
    P[free] += delta[:, :3]
    Q[free] = quat_canonical(quat_mul(Q[free], quat_exp(delta[:, 3:])))
    return P, Q


@dataclass
class OptimizeResult:
    positions: np.ndarray
    orientations: np.ndarray
    report: SolverReport


def optimize(snapshot: Snapshot, options: SolverOptions | None = None) -> OptimizeResult:
    options = options or SolverOptions()
    fixed = np.asarray(snapshot.fixed, dtype=bool)
    if fixed.all():
        raise StateError("optimize needs at least one free node")
    if len(np.unique(snapshot.ids)) != len(snapshot.ids):
        raise StateError("snapshot node ids must be unique")
    numeric = options.jacobian == "numeric"
    groups = _group_factors(snapshot.factors, snapshot.ids)
    _check_reachability(snapshot, groups)

    P = np.array(snapshot.positions, dtype=float)
    Q = np.array(snapshot.orientations, dtype=float)
    system = linearize(snapshot, P, Q, groups, numeric)
    diag = system.hessian[system.bandwidth]
    if np.any(diag <= 0):
        dead = np.flatnonzero(diag <= 0)
        dirs = [(int(system.free_ids[k // 6]), _COMPONENTS[k % 6]) for k in dead]
        raise GaugeError(f"unconstrained directions: {dirs[:12]}", dirs)

    cost = system.cost
    history = [cost]
    lam = options.initial_damping
    termination = "max_iterations"
    it = 0
    while it < options.max_iterations:
        gnorm = float(np.max(np.abs(system.gradient))) if system.size else 0.0
        if gnorm < options.gradient_tolerance:
            termination = "gradient"
            break
        try:
            delta = solve_normal_equations(system, lam)
        except NumericError:
            lam *= options.damping_up
            if lam > options.max_damping:
                raise GaugeError("normal equations singular even under maximum damping")
            continue
        it += 1
        P_new, Q_new = _retract(P, Q, fixed, delta)
        # linearize at the trial point directly; rejected steps are rare
        trial = linearize(snapshot, P_new, Q_new, groups, numeric)
        if trial.cost <= cost:
            rel = (cost - trial.cost) / cost if cost > 0 else 0.0
            P, Q, cost, system = P_new, Q_new, trial.cost, trial
            history.append(cost)
            lam = max(lam * options.damping_down, 1e-15)
            if rel < options.cost_tolerance:
                termination = "cost"
                break
        else:
            lam *= options.damping_up
            if lam > options.max_damping:
                termination = "damping"
                break
    gnorm = float(np.max(np.abs(system.gradient))) if system.size else 0.0
    if termination == "max_iterations" and gnorm < options.gradient_tolerance:
        termination = "gradient"
    report = SolverReport(it, history[0], cost, termination, gnorm, history)
    log.debug("optimize: %s", report.as_dict())
    return OptimizeResult(P, Q, report)
