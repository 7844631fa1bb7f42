import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..concurrently import MultiProcess
from ..config import NetConfig, NoiseConfig, PipelineConfig
from ..config.slam_types import Positions
from ..dpgo import RoundStatus, anchored_trajectories, dpgo_round, global_cost, run_dpgo
from ..estimation import LoopClosure
from ..network import CommReport, MessageKind, SimulatedNetwork
from ..scenario import Dataset, RangingMeasurement, Trajectory
from ..utils import OpTimings, Timer
from ._robot import RobotNode, Snapshot

__all__ = ["SimulationResult", "NODE_KINDS", "sensor_timeline", "run_simulation"]

logger = logging.getLogger(__name__)

# message kinds consumed by RobotNode.tick; separators go to the DPGO agents
NODE_KINDS = (MessageKind.ODOM_WINDOW, MessageKind.LOOP_CLOSURE, MessageKind.PCM_VERDICT)


@dataclass
class SimulationResult:
    trajectories: Dict[int, Trajectory]
    raw_closures: List[LoopClosure]
    inlier_closures: List[LoopClosure]
    cost_trace: List[RoundStatus]
    comm: CommReport
    timings: Dict[str, float]
    snapshots: Dict[int, List[Snapshot]] = field(default_factory=dict)
    anchored: List[int] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def final_cost(self) -> float:
        return self.cost_trace[-1].cost if self.cost_trace else math.nan

    @property
    def rounds(self) -> int:
        return len(self.cost_trace)


def sensor_timeline(dataset: Dataset) -> Tuple[np.ndarray, Dict[int, Dict[float, int]],
                                               Dict[float, Dict[int, List[RangingMeasurement]]]]:
    """
    Merged tick grid: the sorted distinct timestamps of all odometry and ranging
    records, with per-robot odometry indices and rangings grouped by time and source.
    """
    stamps = set()
    odom_at: Dict[int, Dict[float, int]] = {}
    for robot, traj in dataset.odometry.items():
        times = [float(t) for t in traj.times]
        odom_at[robot] = {t: n for n, t in enumerate(times)}
        stamps.update(times)
    ranging_at: Dict[float, Dict[int, List[RangingMeasurement]]] = defaultdict(lambda: defaultdict(list))
    for m in dataset.ranging:
        stamps.add(float(m.t))
        ranging_at[float(m.t)][m.source].append(m)
    return np.array(sorted(stamps)), odom_at, ranging_at


def _positions(dataset: Dataset, t: float) -> Optional[Positions]:
    if not dataset.truth:
        return None
    out = {}
    for robot, traj in dataset.truth.items():
        if traj:
            pose = traj.nearest(t)
            out[robot] = (pose.x, pose.y)
    return out


def _tick(job, now: float):
    node, odometry, rangings, inbox = job
    return node.tick(now, odometry, rangings, inbox)


def run_simulation(dataset: Dataset, pipeline: PipelineConfig = None, noise: NoiseConfig = None,
                   net: NetConfig = None, record_snapshots: bool = False,
                   max_threads: int = None) -> SimulationResult:
    """
    Drives one RobotNode per robot over the merged sensor timeline.

    At every tick each node gets its odometry sample (if one is stamped at that
    instant), the rangings it measured and the messages delivered to it; its
    outbox is sent in robot order and the network is stepped with the true
    positions (connectivity is not checked for datasets without truth). A DPGO
    round runs every ``1 / dpgo.update_rate`` seconds and, with
    ``dpgo.finalize``, rounds continue after the last tick until convergence.

    With ``pipeline.parallel`` the node ticks of one instant run on a thread
    pool; the network stays the only synchronization point, so the result is
    the same as a sequential run.

    Operation timings go to a registry private to the run, so concurrent runs
    report only their own.
    """
    pipeline = pipeline or PipelineConfig()
    noise = noise or NoiseConfig()
    net = net or NetConfig()
    robots = dataset.robots
    if not robots:
        raise ValueError("dataset has no robots")
    timings = OpTimings()
    timer = Timer()
    anchor_robot = min(robots)
    nodes = {robot: RobotNode(robot, pipeline, noise, anchor_robot) for robot in robots}
    agents = {robot: node.agent for robot, node in nodes.items()}
    network = SimulatedNetwork(net)
    timeline, odom_at, ranging_at = sensor_timeline(dataset)
    pool = MultiProcess(max_threads or len(robots)) if pipeline.parallel else None
    period = 1.0 / pipeline.dpgo.update_rate
    next_round = timeline[0] + period if len(timeline) else math.inf
    trace: List[RoundStatus] = []
    snapshots: Dict[int, List[Snapshot]] = {robot: [] for robot in robots}
    logger.info(f"simulating {len(robots)} robots over {len(timeline)} ticks "
                f"(tau={pipeline.tau}, delta={pipeline.delta}, epsilon={pipeline.pcm.epsilon})")

    with timings.activate():
        now = -math.inf
        positions = None
        for now in timeline:
            now = float(now)
            positions = _positions(dataset, now)
            jobs = []
            for robot in robots:
                index = odom_at.get(robot, {}).get(now)
                odometry = dataset.odometry[robot].pose(index) if index is not None else None
                rangings = ranging_at.get(now, {}).get(robot, [])
                jobs.append((nodes[robot], odometry, rangings, network.receive(robot, NODE_KINDS)))
            if pool is not None:
                outboxes = pool.map(_tick, jobs, now)
            else:
                outboxes = [_tick(job, now) for job in jobs]
            for robot, outbox in zip(robots, outboxes):
                for out in outbox:
                    network.send(robot, out.receiver, out.kind, out.payload, now)
            network.step(now, positions)
            if now >= next_round:
                status = dpgo_round(agents, network, now, len(trace), positions, pipeline.dpgo)
                status.cost = global_cost(agents)
                trace.append(status)
                next_round += period
                _account(nodes, network)
                if record_snapshots:
                    for robot in robots:
                        snapshots[robot].append(nodes[robot].snapshot())

        if pipeline.dpgo.finalize and math.isfinite(now):
            trace.extend(run_dpgo(agents, network, pipeline.dpgo, now, positions, start_round=len(trace)))
    _account(nodes, network)
    for robot in robots:
        snapshots[robot].append(nodes[robot].snapshot())

    raw = sorted((lc for node in nodes.values() for lc in node.raw_closures), key=lambda lc: (lc.t, lc.uid))
    inliers = sorted((lc for node in nodes.values() for lc in node.inlier_closures), key=lambda lc: (lc.t, lc.uid))
    result = SimulationResult(
        trajectories=anchored_trajectories(agents),
        raw_closures=raw,
        inlier_closures=inliers,
        cost_trace=trace,
        comm=network.account(),
        timings=timings.summary(),
        snapshots=snapshots,
        anchored=[robot for robot in robots if agents[robot].anchored],
        elapsed=timer.elapsed,
    )
    logger.info(f"simulation done in {result.elapsed:.1f}s: {timings.count('estimation')} estimation attempts, "
                f"{len(raw)} closures, {len(inliers)} consistent, "
                f"{result.rounds} dpgo rounds, {result.comm.total_bytes} bytes")
    return result


def _account(nodes: Dict[int, RobotNode], network: SimulatedNetwork) -> None:
    sender_bytes = network.account().sender_bytes
    for robot, node in nodes.items():
        node.bytes_sent = sender_bytes.get(robot, 0)
