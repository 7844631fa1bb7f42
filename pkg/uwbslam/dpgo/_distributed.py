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
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Set

import numpy as np

from ..config import DpgoConfig, NoiseConfig
from ..config.slam_types import NodeKey
from ..geometry import Pose2, between, compose, compose_many, between_many
from ..network import MessageKind, SimulatedNetwork
from ..scenario import Trajectory
from ..utils import time_exec
from ._graph import Edge, Keyframe, PoseGraph, _odometry_edges, _rigid_initialize, keyframes
from ._solver import local_block_optimize

__all__ = [
    "SeparatorPoseMsg",
    "RoundStatus",
    "DpgoAgent",
    "make_agents",
    "dpgo_round",
    "run_dpgo",
    "assemble_graph",
    "global_cost",
    "anchored_trajectories",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeparatorPoseMsg:
    """
    Current estimates of the sender's separator nodes. ``anchored`` tells the
    receiver whether the poses are already in the common frame.
    """
    sender: int
    round: int
    anchored: bool
    poses: Mapping[NodeKey, Pose2] = field(default_factory=dict)


@dataclass
class RoundStatus:
    round: int
    complete: bool
    converged: bool
    step_norms: Dict[int, float]
    skipped: List[int] = field(default_factory=list)
    resent: int = 0
    cost: float = math.nan


class DpgoAgent:
    """
    One robot's share of the distributed pose-graph problem.

    Holds only the robot's own keyframe estimates, its odometry chain, the loop
    edges it takes part in and the separator poses last received from each
    neighbour. A robot other than the anchor robot stays in its private frame
    until a loop edge to an anchored neighbour lets it move rigidly into the
    common frame.
    """

    def __init__(self, robot: int, noise: NoiseConfig = None, cfg: DpgoConfig = None,
                 odom_rate: float = None, anchor_robot: int = 0):
        self.robot = robot
        self.noise = noise or NoiseConfig()
        self.cfg = cfg or DpgoConfig()
        self.odom_rate = odom_rate or self.noise.odom_rate
        self.anchor_robot = anchor_robot
        self.anchored = robot == anchor_robot
        self.poses: Dict[NodeKey, Pose2] = {}
        self.frames: List[Keyframe] = []
        self._odometry = Trajectory()
        self._scanned = 0
        self._odom_edges: List[Edge] = []
        self._loop_edges: Dict[int, Edge] = {}
        self._inliers: Dict[int, Set[int]] = {}
        self._separators: Dict[int, Dict[NodeKey, Pose2]] = {}
        self._anchored_peers: Set[int] = set()

    def __repr__(self):
        return f"DpgoAgent(robot={self.robot}, nodes={len(self.poses)}, anchored={self.anchored})"

    def update_odometry(self, odometry: Trajectory) -> int:
        """Appends the keyframes of the new samples of ``odometry``; returns how many were added."""
        self._odometry = odometry
        last = self.frames[-1].key[1] if self.frames else None
        new = keyframes(self.robot, odometry, self.odom_rate, self.cfg.keyframe_stride, self._scanned, last)
        self._scanned = len(odometry)
        for frame in new:
            if not self.frames:
                self.poses[frame.key] = Pose2.identity()
            else:
                prev = self.frames[-1]
                self.poses[frame.key] = compose(self.poses[prev.key], between(prev.odometry, frame.odometry))
                self._odom_edges.extend(_odometry_edges([prev, frame], self.noise, self.cfg.sigma_floor))
            self.frames.append(frame)
        return len(new)

    def add_loop_edge(self, edge: Edge) -> None:
        self._loop_edges[edge.uid] = edge

    def set_inliers(self, neighbour: int, uids: Iterable[int]) -> None:
        self._inliers[neighbour] = set(uids)

    @property
    def peers(self) -> List[int]:
        return sorted({e.other(self.robot)[0] for e in self._loop_edges.values()})

    def active_edges(self) -> List[Edge]:
        """Loop edges in the current consistent sets whose own endpoint exists, by (neighbour, t, uid)."""
        edges = []
        for edge in self._loop_edges.values():
            neighbour = edge.other(self.robot)[0]
            own = edge.i if edge.i[0] == self.robot else edge.j
            if edge.uid in self._inliers.get(neighbour, ()) and own in self.poses:
                edges.append(edge)
        edges.sort(key=lambda e: (e.other(self.robot)[0], e.t, e.uid))
        return edges

    def usable_edges(self) -> List[Edge]:
        return [e for e in self.active_edges() if e.other(self.robot)[0] in self._anchored_peers]

    def receive(self, msg: SeparatorPoseMsg) -> None:
        self._separators[msg.sender] = dict(msg.poses)
        if msg.anchored:
            self._anchored_peers.add(msg.sender)
        else:
            self._anchored_peers.discard(msg.sender)

    def stale_peers(self) -> List[int]:
        """Anchored neighbours whose last separator message lacks a pose this robot needs."""
        stale = set()
        for edge in self.usable_edges():
            far = edge.other(self.robot)
            if far not in self._separators.get(far[0], {}):
                stale.add(far[0])
        return sorted(stale)

    def initialize(self) -> bool:
        """Rigid move into the common frame from the first usable loop edge; True if it happened."""
        if self.anchored:
            return False
        for edge in self.usable_edges():
            far = edge.other(self.robot)
            known = self._separators.get(far[0], {})
            if far in known:
                _rigid_initialize(self.poses, edge, self.robot, known[far])
                self.anchored = True
                logger.debug(f"robot {self.robot} joined the common frame through closure {edge.uid}")
                return True
        return False

    def fragment(self) -> PoseGraph:
        edges = self.usable_edges() if self.anchored else []
        fixed = ()
        if self.frames and (self.robot == self.anchor_robot or not edges):
            fixed = (self.frames[0].key,)
        return PoseGraph(self.poses, self._odom_edges + edges, fixed=fixed)

    def optimize(self) -> float:
        """One local block solve against the received separators; returns the largest pose change."""
        fragment = self.fragment()
        if not fragment.loop_edges:
            return 0.0
        separators = {}
        for edge in fragment.loop_edges:
            far = edge.other(self.robot)
            separators[far] = self._separators[far[0]][far]
        updated, step = local_block_optimize(fragment, self.robot, separators, self.cfg)
        self.poses = updated.poses
        return step

    def separator_message(self, round_index: int) -> SeparatorPoseMsg:
        if not self.anchored:
            return SeparatorPoseMsg(self.robot, round_index, False, {})
        keys = sorted({e.i if e.i[0] == self.robot else e.j for e in self.active_edges()})
        return SeparatorPoseMsg(self.robot, round_index, True, {k: self.poses[k] for k in keys})

    def keyframe_trajectory(self) -> Trajectory:
        return Trajectory([f.t for f in self.frames], [self.poses[f.key] for f in self.frames])

    def trajectory(self) -> Trajectory:
        """Estimate at every odometry instant: the last keyframe at or before it composed with odometry."""
        odometry = self._odometry
        if not self.frames or not odometry:
            return Trajectory()
        times = odometry.times[:self._scanned]
        frame_index = np.array([f.index for f in self.frames])
        which = np.clip(np.searchsorted(frame_index, np.arange(len(times)), side="right") - 1, 0, None)
        base = np.array([self.poses[f.key].as_tuple() for f in self.frames])[which]
        origin = np.array([f.odometry.as_tuple() for f in self.frames])[which]
        poses = compose_many(base, between_many(origin, odometry.poses[:self._scanned]))
        return Trajectory.from_arrays(times, poses)


def make_agents(odometry: Mapping[int, Trajectory], loop_edges: Iterable[Edge] = (),
                noise: NoiseConfig = None, cfg: DpgoConfig = None, odom_rate: float = None) -> Dict[int, DpgoAgent]:
    """Agents for a finished dataset with every given loop edge in the consistent set."""
    anchor_robot = min(odometry)
    agents = {robot: DpgoAgent(robot, noise, cfg, odom_rate, anchor_robot) for robot in sorted(odometry)}
    for robot, agent in agents.items():
        agent.update_odometry(odometry[robot])
    edges = list(loop_edges)
    for edge in edges:
        for robot in (edge.i[0], edge.j[0]):
            agents[robot].add_loop_edge(edge)
    for robot, agent in agents.items():
        by_peer: Dict[int, Set[int]] = {}
        for edge in edges:
            if robot in (edge.i[0], edge.j[0]):
                by_peer.setdefault(edge.other(robot)[0], set()).add(edge.uid)
        for peer, uids in by_peer.items():
            agent.set_inliers(peer, uids)
    return agents


def assemble_graph(agents: Mapping[int, DpgoAgent]) -> PoseGraph:
    """All agents' current estimates and active edges in one graph (evaluation only)."""
    poses, edges, loops = {}, [], {}
    for robot in sorted(agents):
        agent = agents[robot]
        poses.update(agent.poses)
        edges.extend(agent._odom_edges)
        for edge in agent.active_edges():
            loops[edge.uid] = edge
    edges.extend(loops[uid] for uid in sorted(loops))
    anchor = None
    if agents:
        first = agents[min(agents)]
        anchor = first.frames[0].key if first.frames else None
    return PoseGraph(poses, [e for e in edges if e.i in poses and e.j in poses], anchor=anchor)


def global_cost(agents: Mapping[int, DpgoAgent]) -> float:
    return assemble_graph(agents).cost()


def anchored_trajectories(agents: Mapping[int, DpgoAgent]) -> Dict[int, Trajectory]:
    return {robot: agent.trajectory() for robot, agent in sorted(agents.items())}


def _broadcast(agent: DpgoAgent, network: SimulatedNetwork, msg: SeparatorPoseMsg, now: float,
               positions, max_retries: int):
    sent = [network.send(agent.robot, peer, MessageKind.SEPARATOR_POSES, msg, now) for peer in agent.peers]
    network.step(now, positions)
    lost = [m for m in sent if any(m is d for d in network.last_dropped)]
    resent = 0
    for _ in range(max_retries):
        if not lost:
            break
        again = [network.send(m.sender, m.receiver, m.kind, m.payload, now) for m in lost]
        resent += len(again)
        network.step(now, positions)
        lost = [m for m in again if any(m is d for d in network.last_dropped)]
    return resent, not lost


@time_exec(name="dpgo_round")
def dpgo_round(agents: Mapping[int, DpgoAgent], network: SimulatedNetwork, now: float,
               round_index: int = 0, positions=None, cfg: DpgoConfig = None) -> RoundStatus:
    """
    One block-coordinate sweep in robot id order. Each robot reads the separator
    messages delivered to it, joins the common frame if it can, solves its own
    block and broadcasts its separators (resent up to ``max_retries`` times when
    lost). A robot missing a neighbour's separator pose skips its turn and the
    round is incomplete. The round converged when it is complete and every step
    is below ``tolerance``.
    """
    cfg = cfg or DpgoConfig()
    status = RoundStatus(round_index, True, False, {})
    for robot in sorted(agents):
        agent = agents[robot]
        for message in network.receive(robot, [MessageKind.SEPARATOR_POSES]):
            agent.receive(message.payload)
        joined = agent.initialize()
        stale = agent.stale_peers()
        if stale:
            logger.debug(f"round {round_index}: robot {robot} waits for separators of {stale}")
            status.skipped.append(robot)
            status.step_norms[robot] = math.inf
            status.complete = False
        else:
            step = agent.optimize()
            status.step_norms[robot] = math.inf if joined else step
        resent, delivered = _broadcast(agent, network, agent.separator_message(round_index), now, positions,
                                       cfg.max_retries)
        status.resent += resent
        if not delivered:
            status.complete = False
    status.converged = status.complete and all(s < cfg.tolerance for s in status.step_norms.values())
    if not status.complete:
        logger.debug(f"round {round_index} incomplete (skipped: {status.skipped})")
    return status


def run_dpgo(agents: Mapping[int, DpgoAgent], network: SimulatedNetwork, cfg: DpgoConfig = None,
             now: float = 0.0, positions=None, start_round: int = 0, max_rounds: Optional[int] = None,
             trace_cost: bool = True) -> List[RoundStatus]:
    """Runs rounds until one converges or ``max_rounds`` is reached; records the global cost per round."""
    cfg = cfg or DpgoConfig()
    max_rounds = cfg.max_rounds if max_rounds is None else max_rounds
    statuses = []
    for offset in range(max_rounds):
        status = dpgo_round(agents, network, now, start_round + offset, positions, cfg)
        if trace_cost:
            status.cost = global_cost(agents)
        statuses.append(status)
        if status.converged:
            break
    else:
        logger.warning(f"dpgo did not converge in {max_rounds} rounds")
    if statuses:
        logger.debug(f"dpgo: {len(statuses)} rounds, last cost {statuses[-1].cost:.6g}")
    return statuses
