"""

Copyright (c) 2024 The uwbslam Project

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from ..config import DpgoConfig, NoiseConfig
from ..config.slam_types import NodeKey
from ..geometry import Covariance3, Pose2, between, compose, inverse, wrap_angles
from ..scenario import OdometryLookupError, Trajectory

__all__ = [
    "Edge",
    "Keyframe",
    "PoseGraph",
    "keyframes",
    "odometry_information",
    "loop_edge",
    "build_local_graph",
    "build_pose_graph",
    "initialize_poses",
    "edge_residuals",
]

logger = logging.getLogger(__name__)


def edge_residuals(xi: np.ndarray, xj: np.ndarray, z: np.ndarray):
    """
    Vectorized ``e = between(z, between(xi, xj))`` for ``(m, 3)`` pose arrays and
    its Jacobians ``A = de/dxi`` and ``B = de/dxj`` in global coordinates.

    Returns:
        ``(e, A, B)`` of shapes ``(m, 3)``, ``(m, 3, 3)``, ``(m, 3, 3)``.
    """
    xi, xj, z = (np.asarray(v, dtype=float).reshape(-1, 3) for v in (xi, xj, z))
    c, s = np.cos(xi[:, 2]), np.sin(xi[:, 2])
    cz, sz = np.cos(z[:, 2]), np.sin(z[:, 2])
    dx, dy = xj[:, 0] - xi[:, 0], xj[:, 1] - xi[:, 1]
    hx = c * dx + s * dy
    hy = -s * dx + c * dy
    ux, uy = hx - z[:, 0], hy - z[:, 1]
    m = len(z)
    e = np.empty((m, 3))
    e[:, 0] = cz * ux + sz * uy
    e[:, 1] = -sz * ux + cz * uy
    e[:, 2] = wrap_angles(xj[:, 2] - xi[:, 2] - z[:, 2])

    # (R_z^T R_i^T) and its action on the heading derivative of R_i^T (t_j - t_i)
    cc, ss = cz * c - sz * s, cz * s + sz * c
    B = np.zeros((m, 3, 3))
    B[:, 0, 0], B[:, 0, 1] = cc, ss
    B[:, 1, 0], B[:, 1, 1] = -ss, cc
    B[:, 2, 2] = 1.0
    A = -B
    A[:, 0, 2] = cz * hy - sz * hx
    A[:, 1, 2] = -sz * hy - cz * hx
    return e, A, B


@dataclass(frozen=True, eq=False)
class Edge:
    """
    Relative-pose constraint ``z`` from node ``i`` to node ``j`` weighted by
    ``information``. ``kind`` is ``odom`` or ``loop``; loop edges keep the uid and
    time of the closure they come from.
    """
    i: NodeKey
    j: NodeKey
    z: Pose2
    information: np.ndarray
    kind: str = "odom"
    uid: int = -1
    t: float = math.nan

    def __post_init__(self):
        info = np.array(self.information, dtype=float).reshape(3, 3)
        info.setflags(write=False)
        object.__setattr__(self, "i", tuple(self.i))
        object.__setattr__(self, "j", tuple(self.j))
        object.__setattr__(self, "information", info)

    @classmethod
    def from_covariance(cls, i: NodeKey, j: NodeKey, z: Pose2, covariance, **kwargs) -> "Edge":
        return cls(i, j, z, Covariance3(covariance).information, **kwargs)

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.information)

    @property
    def cross_robot(self) -> bool:
        return self.i[0] != self.j[0]

    def other(self, robot: int) -> NodeKey:
        return self.j if self.i[0] == robot else self.i

    def error(self, xi: Pose2, xj: Pose2) -> np.ndarray:
        return between(self.z, between(xi, xj)).as_array()

    def jacobians(self, xi: Pose2, xj: Pose2) -> Tuple[np.ndarray, np.ndarray]:
        _, A, B = edge_residuals(xi.as_array(), xj.as_array(), self.z.as_array())
        return A[0], B[0]

    def cost(self, xi: Pose2, xj: Pose2) -> float:
        e = self.error(xi, xj)
        return float(e @ self.information @ e)


@dataclass(frozen=True)
class Keyframe:
    key: NodeKey
    t: float
    index: int
    odometry: Pose2


def keyframes(robot: int, odometry: Trajectory, odom_rate: float, stride: int = 1,
              start: int = 0, last: Optional[int] = None) -> List[Keyframe]:
    """
    Odometry samples on the shared keyframe grid: the sample at ``t`` is keyframe
    ``k = round(t * odom_rate) / stride`` when that is an integer. Robots with
    synchronized clocks therefore share keyframe indices at equal times.

    ``start`` and ``last`` (the previous keyframe index) resume a scan of a
    growing stream.
    """
    out = []
    for index in range(start, len(odometry)):
        t = float(odometry.times[index])
        pose = odometry.pose(index)
        tick = int(round(t * odom_rate))
        if tick % stride:
            continue
        k = tick // stride
        if k == last:
            continue
        out.append(Keyframe((robot, k), t, index, pose))
        last = k
    return out


def odometry_information(noise: NoiseConfig, steps: int, floor: float = 1e-3) -> np.ndarray:
    """Inverse covariance of ``steps`` composed odometry increments (per-axis variances add up)."""
    st = max(noise.odom_trans_sigma, floor)
    sr = max(noise.odom_rot_sigma, floor)
    steps = max(int(steps), 1)
    return np.diag([1.0 / (steps * st ** 2), 1.0 / (steps * st ** 2), 1.0 / (steps * sr ** 2)])


def _pose_at(odometry: Trajectory, t: float, tolerance: float) -> Pose2:
    try:
        return odometry.interpolate(t)
    except OdometryLookupError:
        return odometry.nearest(t, tolerance)


def loop_edge(lc, odometry: Mapping[int, Trajectory], odom_rate: float, noise: NoiseConfig,
              stride: int = 1, floor: float = 1e-3) -> Edge:
    """
    Moves a closure at time ``t`` to the nearest keyframe instant ``t_k`` shared
    by both robots, correcting it with each robot's own odometry:
    ``z' = between(o_a(t_k), o_a(t)) + z + between(o_b(t), o_b(t_k))``. The
    covariance grows by the odometry noise of the steps bridged on both sides.

    Raises:
        OdometryLookupError: either robot has no odometry around ``t``.
    """
    alpha, beta = lc.pair
    oa, ob = odometry[alpha], odometry[beta]
    if not oa or not ob:
        raise OdometryLookupError(lc.t, f"no odometry for robots {lc.pair}")
    period = stride / odom_rate
    lo = max(oa.start_time, ob.start_time)
    hi = min(oa.end_time, ob.end_time)
    k = int(round(lc.t / period))
    if k * period > hi + 1e-9:
        k = int(math.floor(hi / period + 1e-9))
    if k * period < lo - 1e-9:
        k = int(math.ceil(lo / period - 1e-9))
    tk = k * period
    tol = 0.5 / odom_rate
    z = compose(compose(between(oa.nearest(tk, tol), _pose_at(oa, lc.t, tol)), lc.pose),
                between(_pose_at(ob, lc.t, tol), ob.nearest(tk, tol)))
    steps = 2 * int(round(abs(lc.t - tk) * odom_rate))
    covariance = lc.covariance.matrix
    if steps:
        covariance = covariance + np.linalg.inv(odometry_information(noise, steps, floor))
    return Edge.from_covariance((alpha, k), (beta, k), z, covariance, kind="loop", uid=lc.uid, t=lc.t)


class PoseGraph:
    """
    Node estimates keyed by ``(robot, keyframe)`` and the edges between them.

    A fragment (one robot's part of the distributed problem) may hold loop edges
    whose far endpoint lives on a neighbour; ``validate`` rejects that for a full graph.
    """

    def __init__(self, poses: Mapping[NodeKey, Pose2] = None, edges: Iterable[Edge] = (),
                 anchor: Optional[NodeKey] = None, fixed: Iterable[NodeKey] = ()):
        self.poses: Dict[NodeKey, Pose2] = dict(poses or {})
        self.edges: List[Edge] = list(edges)
        self.anchor = tuple(anchor) if anchor is not None else None
        self.fixed: Set[NodeKey] = set(fixed)
        if self.anchor is not None:
            self.fixed.add(self.anchor)

    def __len__(self):
        return len(self.poses)

    def __repr__(self):
        return f"PoseGraph({len(self.poses)} nodes, {len(self.edges)} edges, anchor={self.anchor})"

    def copy(self) -> "PoseGraph":
        return PoseGraph(self.poses, self.edges, self.anchor, self.fixed)

    def with_poses(self, poses: Mapping[NodeKey, Pose2]) -> "PoseGraph":
        graph = self.copy()
        graph.poses.update(poses)
        return graph

    @property
    def robots(self) -> List[int]:
        return sorted({key[0] for key in self.poses})

    def nodes_of(self, robot: int) -> List[NodeKey]:
        return sorted(key for key in self.poses if key[0] == robot)

    @property
    def loop_edges(self) -> List[Edge]:
        return [e for e in self.edges if e.kind == "loop"]

    @property
    def odometry_edges(self) -> List[Edge]:
        return [e for e in self.edges if e.kind == "odom"]

    def separators(self, robot: int) -> List[NodeKey]:
        """Nodes of ``robot`` incident to a cross-robot edge."""
        keys = set()
        for edge in self.edges:
            if edge.cross_robot:
                for key in (edge.i, edge.j):
                    if key[0] == robot:
                        keys.add(key)
        return sorted(keys)

    def validate(self) -> None:
        for edge in self.edges:
            for key in (edge.i, edge.j):
                if key not in self.poses:
                    raise KeyError(f"edge {edge.i}->{edge.j} references the missing node {key}")

    def cost(self, poses: Mapping[NodeKey, Pose2] = None) -> float:
        """Sum of squared Mahalanobis residuals over the edges with both endpoints known."""
        poses = self.poses if poses is None else poses
        edges = [e for e in self.edges if e.i in poses and e.j in poses]
        if not edges:
            return 0.0
        xi = np.array([poses[e.i].as_tuple() for e in edges])
        xj = np.array([poses[e.j].as_tuple() for e in edges])
        z = np.array([e.z.as_tuple() for e in edges])
        info = np.stack([e.information for e in edges])
        err, _, _ = edge_residuals(xi, xj, z)
        return float(np.einsum("mi,mij,mj->", err, info, err))

    def trajectory(self, robot: int, times: Mapping[NodeKey, float]) -> Trajectory:
        keys = self.nodes_of(robot)
        return Trajectory([times[k] for k in keys], [self.poses[k] for k in keys])


def _odometry_edges(frames: Sequence[Keyframe], noise: NoiseConfig, floor: float) -> List[Edge]:
    edges = []
    for a, b in zip(frames[:-1], frames[1:]):
        info = odometry_information(noise, b.index - a.index, floor)
        edges.append(Edge(a.key, b.key, between(a.odometry, b.odometry), info, kind="odom"))
    return edges


def build_local_graph(robot: int, odometry: Trajectory, loop_edges: Iterable[Edge] = (),
                      noise: NoiseConfig = None, cfg: DpgoConfig = None,
                      odom_rate: float = None) -> PoseGraph:
    """
    One robot's fragment: a node per keyframe initialized at its odometry
    (re-expressed so the first node is the identity), the odometry chain and
    the loop edges that touch the robot.
    """
    noise = noise or NoiseConfig()
    cfg = cfg or DpgoConfig()
    if not odometry:
        raise ValueError(f"robot {robot} has no odometry")
    frames = keyframes(robot, odometry, odom_rate or noise.odom_rate, cfg.keyframe_stride)
    origin = inverse(frames[0].odometry)
    poses = {f.key: compose(origin, f.odometry) for f in frames}
    edges = _odometry_edges(frames, noise, cfg.sigma_floor)
    edges.extend(e for e in loop_edges if robot in (e.i[0], e.j[0]))
    return PoseGraph(poses, edges)


def _rigid_initialize(poses: Dict[NodeKey, Pose2], edge: Edge, robot: int, neighbour_pose: Pose2):
    """Moves all of ``robot``'s poses rigidly so that ``edge`` is satisfied exactly."""
    own = edge.i if edge.i[0] == robot else edge.j
    target = compose(neighbour_pose, inverse(edge.z)) if own == edge.i else compose(neighbour_pose, edge.z)
    correction = compose(target, inverse(poses[own]))
    for key in [k for k in poses if k[0] == robot]:
        poses[key] = compose(correction, poses[key])
    poses[own] = target


def initialize_poses(poses: Dict[NodeKey, Pose2], edges: Sequence[Edge], anchor_robot: int) -> Set[int]:
    """
    Spanning-tree initialization by sweeps in robot id order: every robot not
    yet placed is moved rigidly onto the first loop edge (by neighbour id, then
    time) reaching a placed robot, until a sweep changes nothing. Returns the
    placed robots.
    """
    robots = sorted({k[0] for k in poses})
    placed = {anchor_robot}
    changed = True
    while changed:
        changed = False
        for robot in robots:
            if robot in placed:
                continue
            candidates = [e for e in edges
                          if e.kind == "loop" and robot in (e.i[0], e.j[0]) and e.other(robot)[0] in placed
                          and e.i in poses and e.j in poses]
            if not candidates:
                continue
            edge = min(candidates, key=lambda e: (e.other(robot)[0], e.t, e.uid))
            _rigid_initialize(poses, edge, robot, poses[edge.other(robot)])
            placed.add(robot)
            changed = True
    return placed


def build_pose_graph(odometry: Mapping[int, Trajectory], loop_edges: Iterable[Edge] = (),
                     noise: NoiseConfig = None, cfg: DpgoConfig = None, odom_rate: float = None) -> PoseGraph:
    """
    Full multi-robot graph (the centralized problem): all fragments merged,
    loop edges deduplicated by uid, the lowest robot's first node as anchor and
    the other robots placed by ``initialize_poses``.
    """
    noise = noise or NoiseConfig()
    cfg = cfg or DpgoConfig()
    loops = {e.uid: e for e in loop_edges}
    poses, edges = {}, []
    for robot in sorted(odometry):
        fragment = build_local_graph(robot, odometry[robot], (), noise, cfg, odom_rate)
        poses.update(fragment.poses)
        edges.extend(fragment.edges)
    edges.extend(loops[uid] for uid in sorted(loops))
    anchor_robot = min(odometry)
    anchor = min(k for k in poses if k[0] == anchor_robot)
    initialize_poses(poses, edges, anchor_robot)
    graph = PoseGraph(poses, edges, anchor=anchor)
    graph.validate()
    return graph
