"""Pose-graph data model: keyframe nodes from odometry, time association of
global measurements, window trimming and the local-to-world transform."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, OrderingError
from .factors import (
    BaroFactor,
    BaroMeasurement,
    GpsFactor,
    GpsMeasurement,
    LocalFactor,
    MagFactor,
    MagMeasurement,
    MagReference,
    gps_covariance,
    mag_covariance,
    odometry_covariance,
)
from .geodesy import EnuOrigin, GeoPoint, lla_to_enu
from .manifold import Pose, quat_conj, quat_mul, quat_rotate, relative_pose
from .solver import Snapshot

log = logging.getLogger(__name__)

FrameTransform = Pose  # maps local-odometry coordinates into the world frame


@dataclass
class GraphNode:
    id: int
    timestamp: float
    state: Pose
    local: Pose
    fixed: bool = False


@dataclass
class GraphConfig:
    keyframe_interval: float = 0.1
    association_tolerance: float = 0.05
    window_capacity: int = 100_000
    gps_base_sigma: float = 1.0
    gps_reference_satellites: int = 10
    gps_huber_delta: float | None = 1.0
    mag_base_sigma: float = 0.05
    mag_reference: MagReference | None = None
    odom_sigma_trans: float = 0.01
    odom_trans_fraction: float = 0.01
    odom_sigma_rot: float = 0.001
    odom_rot_fraction: float = 0.01


def frame_transform(node: GraphNode, local_pose: Pose) -> FrameTransform:
    """``T`` with ``T * local_pose == node.state``."""
    rot = quat_mul(node.state.orientation, quat_conj(local_pose.orientation))
    return Pose(node.state.position - quat_rotate(rot, local_pose.position), rot)


def predict_global(local_pose: Pose, T: FrameTransform) -> Pose:
    return T.compose(local_pose)


class PoseGraph:
    """Time-ordered keyframe nodes plus their factors.

    Single writer: ingestion calls ``add_odometry`` / ``attach_global`` and
    applies optimizer results through :meth:`apply`. Node 0 is held fixed at
    its dead-reckoned state until the first GPS factor attaches.
    """

    def __init__(self, config: GraphConfig | None = None):
        self.config = config or GraphConfig()
        self.nodes: list[GraphNode] = []
        self.factors: list = []
        self.history: list[GraphNode] = []  # trimmed nodes, frozen
        self.origin: EnuOrigin | None = None
        self.transform: FrameTransform = Pose.identity()
        self.pending: list[tuple[str, object, float]] = []
        self.dropped = Counter()
        self.rejected = Counter()
        self.attached = Counter()
        self._last_odom_t: float | None = None
        self._next_id = 0
        self._gps_seen = False
        self._trimmed = False
        self._by_id: dict[int, GraphNode] = {}

    # -- odometry ------------------------------------------------------------

    def add_odometry(self, pose: Pose, t: float, covariance=None):
        """Feed one local pose. Returns the new node id, or None if not a keyframe."""
        t = float(t)
        if self._last_odom_t is not None and not t > self._last_odom_t:
            raise OrderingError(f"odometry timestamp {t} not after {self._last_odom_t}")
        self._last_odom_t = t
        if not self.nodes:
            node = self._new_node(t, self.transform.compose(pose), pose)
            node.fixed = not self._gps_seen
            self._retry_pending()
            return node.id
        last = self.nodes[-1]
        if t - last.timestamp < self.config.keyframe_interval - 1e-9:
            return None
        z = relative_pose(last.local, pose)
        if covariance is None:
            c = self.config
            covariance = odometry_covariance(
                z, c.odom_sigma_trans, c.odom_trans_fraction, c.odom_sigma_rot, c.odom_rot_fraction
            )
        node = self._new_node(t, last.state.compose(z), pose)
        self.factors.append(LocalFactor((last.id, node.id), z, covariance))
        self.attached["local"] += 1
        self._retry_pending()
        return node.id

    def _new_node(self, t, state, local):
        node = GraphNode(self._next_id, t, state, local)
        self._next_id += 1
        self.nodes.append(node)
        self._by_id[node.id] = node
        return node

    # -- global measurements -------------------------------------------------

    def attach_global(self, kind: str, measurement, t: float):
        """Bind a GPS / mag / baro measurement to the nearest node in time.

        Returns the node id, or None when the measurement was buffered (it is
        newer than every node) or dropped (no node within tolerance; counted in
        ``self.dropped``). Invalid measurements raise :class:`DomainError` and
        are counted in ``self.rejected``.
        """
        if kind not in ("gps", "mag", "baro"):
            raise ValueError(f"unknown measurement kind {kind!r}")
        t = float(t)
        if kind == "gps" and isinstance(measurement, GeoPoint):
            if self.origin is None:
                self.origin = EnuOrigin.from_geopoint(measurement)
            measurement = GpsMeasurement(lla_to_enu(measurement, self.origin), None, t)
        if kind == "mag":
            if not np.linalg.norm(measurement.field) > 0:
                self.rejected[kind] += 1
                raise DomainError("zero-norm magnetometer measurement rejected")
            if self.config.mag_reference is None:
                self.rejected[kind] += 1
                raise DomainError("magnetometer measurement without a configured reference field")
        if not self.nodes or t > self.nodes[-1].timestamp:
            self.pending.append((kind, measurement, t))
            return None
        return self._associate(kind, measurement, t)

    def _associate(self, kind, measurement, t):
        times = np.fromiter((n.timestamp for n in self.nodes), float, len(self.nodes))
        k = int(np.searchsorted(times, t))
        best = None
        for j in (k - 1, k):
            if 0 <= j < len(times):
                if best is None or abs(times[j] - t) < abs(times[best] - t):
                    best = j
        if best is None or abs(times[best] - t) > self.config.association_tolerance + 1e-12:
            self.dropped[kind] += 1
            log.warning("dropping %s measurement at t=%.3f: no node within tolerance", kind, t)
            return None
        node = self.nodes[best]
        self.factors.append(self._make_factor(kind, measurement, node.id))
        self.attached[kind] += 1
        if kind == "gps" and not self._gps_seen:
            self._gps_seen = True
            if not self._trimmed:
                self.nodes[0].fixed = False
        return node.id

    def _make_factor(self, kind, m, node_id):
        c = self.config
        if kind == "gps":
            cov = gps_covariance(m.satellites, c.gps_base_sigma, c.gps_reference_satellites)
            return GpsFactor((node_id,), m, cov, c.gps_huber_delta)
        if kind == "mag":
            ref = c.mag_reference
            cov = mag_covariance(np.linalg.norm(m.field), np.linalg.norm(ref.field), c.mag_base_sigma)
            return MagFactor((node_id,), m, ref, cov)
        if not isinstance(m, BaroMeasurement):
            raise TypeError("barometer measurement must be a BaroMeasurement")
        return BaroFactor((node_id,), m)

    def _retry_pending(self):
        if not self.pending:
            return
        last_t = self.nodes[-1].timestamp
        keep = []
        for kind, m, t in self.pending:
            if t <= last_t:
                self._associate(kind, m, t)
            else:
                keep.append((kind, m, t))
        self.pending = keep

    def flush_pending(self):
        """Associate buffered measurements now that no further nodes will arrive."""
        pending, self.pending = self.pending, []
        for kind, m, t in pending:
            self._associate(kind, m, t)

    # -- window --------------------------------------------------------------

    def trim_window(self) -> int:
        removed = 0
        while len(self.nodes) > self.config.window_capacity:
            old = self.nodes.pop(0)
            del self._by_id[old.id]
            self.history.append(old)
            self.factors = [f for f in self.factors if old.id not in f.nodes]
            removed += 1
        if removed:
            self._trimmed = True
            for n in self.nodes:
                n.fixed = False
            self.nodes[0].fixed = True
        return removed

    # -- optimizer interface -------------------------------------------------

    def snapshot(self) -> Snapshot:
        return Snapshot(
            ids=np.array([n.id for n in self.nodes], dtype=np.int64),
            positions=np.array([n.state.position for n in self.nodes]),
            orientations=np.array([n.state.orientation for n in self.nodes]),
            fixed=np.array([n.fixed for n in self.nodes], dtype=bool),
            factors=list(self.factors),
        )

    def apply(self, snapshot: Snapshot, positions, orientations):
        """Write optimized states back; nodes added since the snapshot keep their
        relative offset to the last snapshotted node."""
        index = self._by_id
        P = np.array(positions, dtype=float)
        Q = np.array(orientations, dtype=float)
        P.flags.writeable = False
        Q.flags.writeable = False
        last_old = None
        for k, nid in enumerate(snapshot.ids.tolist()):
            node = index.get(nid)
            if node is None or node.fixed:
                continue
            if last_old is None or nid > last_old[0]:
                last_old = (nid, node.state)
            node.state = Pose.trusted(P[k], Q[k])
        if last_old is not None:
            anchor_old = last_old[1]
            anchor_new = index[last_old[0]].state
            for node in self.nodes:
                if node.id > last_old[0]:
                    node.state = anchor_new.compose(relative_pose(anchor_old, node.state))
        self.transform = frame_transform(self.nodes[-1], self.nodes[-1].local)

    def node(self, node_id) -> GraphNode:
        return self._by_id[node_id]

    def all_nodes(self):
        return self.history + self.nodes

    def factor_counts(self):
        return dict(Counter(f.kind for f in self.factors))

    def check_structure(self):
        """Raise AssertionError if a structural invariant is broken."""
        ts = [n.timestamp for n in self.nodes]
        assert all(a < b for a, b in zip(ts, ts[1:])), "timestamps not increasing"
        ids = {n.id for n in self.nodes}
        for f in self.factors:
            assert all(i in ids for i in f.nodes), f"dangling factor {f.kind} {f.nodes}"
        links = Counter(f.nodes for f in self.factors if f.kind == "local")
        for a, b in zip(self.nodes, self.nodes[1:]):
            assert links.get((a.id, b.id), 0) == 1, f"nodes {a.id},{b.id} not linked once"
        assert sum(n.fixed for n in self.nodes) <= 1, "more than one fixed node"
