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
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, NamedTuple, Optional, Sequence

from ..config import NoiseConfig, PipelineConfig
from ..dpgo import DpgoAgent, Edge, loop_edge
from ..estimation import InsufficientExcitationError, LoopClosure, RangingWindow, estimate_relative_pose
from ..geometry import Pose2
from ..network import Message, MessageKind, OdomWindow, PcmVerdict
from ..pcm import OdometryAccess, PcmPairState
from ..scenario import OdometryLookupError, RangingMeasurement, Trajectory
from ..utils import time_exec

__all__ = ["Outgoing", "NeighborState", "Snapshot", "RobotNode", "UID_STRIDE"]

logger = logging.getLogger(__name__)

# closure uids are robot * UID_STRIDE + a per-robot counter
UID_STRIDE = 1_000_000


class Outgoing(NamedTuple):
    receiver: int
    kind: MessageKind
    payload: object


@dataclass
class NeighborState:
    """
    What one robot knows about one neighbour. Only the most recent rangings are
    kept; the neighbour's odometry log is kept whole because consistency checks
    compare closures far apart in time.
    """
    peer: int
    capacity: int
    rangings: Deque[RangingMeasurement] = None
    peer_odometry: Trajectory = field(default_factory=Trajectory)
    last_estimate: float = -math.inf
    last_window_end: float = -math.inf
    shared_index: int = 0
    segment_start: float = -math.inf
    pcm: Optional[PcmPairState] = None
    raw: List[LoopClosure] = field(default_factory=list)

    def __post_init__(self):
        if self.rangings is None:
            self.rangings = deque(maxlen=self.capacity)


@dataclass(frozen=True)
class Snapshot:
    robot: int
    t: float
    anchored: bool
    trajectory: Trajectory
    raw_closures: int
    inlier_closures: int
    clique_sizes: Dict[int, int]
    bytes_sent: int
    dropped_messages: int


class RobotNode:
    """
    Per-robot pipeline: odometry log, ranging buffers per neighbour, relative
    pose estimation and consistency filtering for the pairs it owns (those with
    a higher-id neighbour) and its share of the distributed pose graph.

    The node only learns about other robots through the messages handed to
    ``tick``; everything it wants to tell them is returned as ``Outgoing``.
    """

    def __init__(self, robot: int, pipeline: PipelineConfig = None, noise: NoiseConfig = None,
                 anchor_robot: int = 0):
        self.robot = robot
        self.pipeline = pipeline or PipelineConfig()
        self.noise = noise or NoiseConfig()
        self.window = self.pipeline.estimator.window_samples(self.noise.uwb_rate)
        self.odometry = Trajectory()
        self.neighbors: Dict[int, NeighborState] = {}
        self.agent = DpgoAgent(robot, self.noise, self.pipeline.dpgo, self.noise.odom_rate, anchor_robot)
        self.now = -math.inf
        self.bytes_sent = 0
        self.dropped_messages = 0
        self.skipped_degenerate = 0
        self._uid = 0

    def __repr__(self):
        return f"RobotNode(robot={self.robot}, neighbours={sorted(self.neighbors)})"

    def _neighbor(self, peer: int) -> NeighborState:
        if peer not in self.neighbors:
            state = NeighborState(peer, 2 * self.window)
            if self.robot < peer:
                state.pcm = PcmPairState((self.robot, peer), self.pipeline.pcm)
            self.neighbors[peer] = state
        return self.neighbors[peer]

    def _next_uid(self) -> int:
        self._uid += 1
        return self.robot * UID_STRIDE + self._uid

    def _ingest(self, message: Message) -> None:
        payload = message.payload
        if message.kind is MessageKind.ODOM_WINDOW and isinstance(payload, OdomWindow):
            state = self._neighbor(message.sender)
            log = state.peer_odometry
            for t, x, y, theta in payload.samples:
                if log and t <= log.end_time:
                    continue
                if not log or t - log.end_time > 1.5 / self.noise.odom_rate:
                    state.segment_start = t
                log.append(t, (x, y, theta))
        elif message.kind is MessageKind.LOOP_CLOSURE and isinstance(payload, Edge):
            self.agent.add_loop_edge(payload)
        elif message.kind is MessageKind.PCM_VERDICT and isinstance(payload, PcmVerdict):
            self.agent.set_inliers(message.sender, payload.uids)
        else:
            self.dropped_messages += 1
            logger.warning(f"robot {self.robot}: dropped unexpected {message.kind} message from {message.sender}")

    def _share_odometry(self, state: NeighborState, now: float) -> Optional[Outgoing]:
        """New own odometry samples for a lower-id neighbour in range, starting a window back on first contact."""
        odometry = self.odometry
        if not odometry:
            return None
        horizon = now - state.capacity / self.noise.uwb_rate - 2.0 / self.noise.odom_rate
        start = state.shared_index
        if start == 0 or odometry.times[start - 1] < horizon:
            start = max(start, odometry.nearest_index(horizon))
        if start >= len(odometry):
            return None
        samples = tuple((float(t),) + tuple(float(v) for v in p)
                        for t, p in zip(odometry.times[start:], odometry.poses[start:]))
        state.shared_index = len(odometry)
        return Outgoing(state.peer, MessageKind.ODOM_WINDOW, OdomWindow(samples))

    def _window(self, state: NeighborState) -> Optional[RangingWindow]:
        peer_log = state.peer_odometry
        if not self.odometry or not peer_log:
            return None
        lo = max(self.odometry.start_time, peer_log.start_time, state.segment_start)
        hi = min(self.odometry.end_time, peer_log.end_time)
        usable = [m for m in state.rangings if lo <= m.t <= hi]
        if len(usable) < self.window:
            return None
        samples = usable[-self.window:]
        if samples[-1].t <= state.last_window_end:
            return None
        return RangingWindow.from_streams(self.odometry, peer_log, samples)

    def _estimate(self, state: NeighborState, now: float) -> List[Outgoing]:
        if now - state.last_estimate < self.pipeline.estimate_period:
            return []
        window = self._window(state)
        if window is None:
            return []
        state.last_estimate = now
        state.last_window_end = window.t
        try:
            lc = estimate_relative_pose(window, self.pipeline.search, self.pipeline.estimator, uid=self._next_uid())
        except InsufficientExcitationError as err:
            logger.debug(f"robot {self.robot}: {err}")
            return []
        if lc.degenerate:
            self.skipped_degenerate += 1
            return []
        state.raw.append(lc)
        streams = {self.robot: self.odometry, state.peer: state.peer_odometry}
        clique = state.pcm.update(lc, OdometryAccess(streams, 1.0 / self.noise.odom_rate))
        try:
            edge = loop_edge(lc, streams, self.noise.odom_rate, self.noise, self.pipeline.dpgo.keyframe_stride,
                             self.pipeline.dpgo.sigma_floor)
        except OdometryLookupError as err:
            logger.debug(f"robot {self.robot}: closure {lc.uid} has no keyframe edge ({err})")
            edge = None
        uids = tuple(state.pcm.graph.nodes[i].uid for i in clique)
        self.agent.set_inliers(state.peer, uids)
        out = []
        if edge is not None:
            self.agent.add_loop_edge(edge)
            out.append(Outgoing(state.peer, MessageKind.LOOP_CLOSURE, edge))
        out.append(Outgoing(state.peer, MessageKind.PCM_VERDICT, PcmVerdict(uids)))
        logger.debug(f"robot {self.robot}: closure {lc.uid} with {state.peer} at t={lc.t:.2f}, "
                     f"{len(uids)}/{len(state.raw)} consistent")
        return out

    @time_exec(name="node_tick")
    def tick(self, now: float, odometry: Optional[Pose2] = None,
             rangings: Sequence[RangingMeasurement] = (), inbox: Sequence[Message] = ()) -> List[Outgoing]:
        """
        Advances the node to ``now``: logs the odometry sample taken at ``now``,
        applies the delivered messages, buffers its own rangings, shares odometry
        with lower-id neighbours heard this tick and, for owned pairs, estimates a
        closure every ``estimate_period`` once a window is available.
        """
        if now < self.now:
            raise ValueError(f"robot {self.robot}: tick at {now!r} after {self.now!r}")
        self.now = now
        if odometry is not None:
            self.odometry.append(now, odometry)
        for message in inbox:
            self._ingest(message)
        heard = set()
        for m in rangings:
            if m.source != self.robot:
                continue
            self._neighbor(m.target).rangings.append(m)
            heard.add(m.target)
        outbox = []
        for peer in sorted(heard):
            if peer < self.robot:
                shared = self._share_odometry(self.neighbors[peer], now)
                if shared is not None:
                    outbox.append(shared)
        for peer in sorted(self.neighbors):
            if peer > self.robot:
                outbox.extend(self._estimate(self.neighbors[peer], now))
        self.agent.update_odometry(self.odometry)
        return outbox

    @property
    def raw_closures(self) -> List[LoopClosure]:
        return [lc for peer in sorted(self.neighbors) for lc in self.neighbors[peer].raw]

    @property
    def inlier_closures(self) -> List[LoopClosure]:
        out = []
        for peer in sorted(self.neighbors):
            state = self.neighbors[peer]
            if state.pcm is not None:
                out.extend(sorted(state.pcm.inliers, key=lambda lc: (lc.t, lc.uid)))
        return out

    def snapshot(self) -> Snapshot:
        cliques = {peer: len(state.pcm.clique) for peer, state in sorted(self.neighbors.items())
                   if state.pcm is not None}
        return Snapshot(self.robot, self.now, self.agent.anchored, self.agent.trajectory(),
                        len(self.raw_closures), len(self.inlier_closures), cliques,
                        self.bytes_sent, self.dropped_messages)
