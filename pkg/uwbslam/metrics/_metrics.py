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
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..config.slam_types import RobotId
from ..estimation import LoopClosure
from ..geometry import Pose2, between_many, compose_many, wrap_angles
from ..scenario import GroundTruth, OdometryLookupError, Trajectory

__all__ = [
    "MetricsError",
    "StageErrors",
    "MetricsReport",
    "STAGES",
    "align_se2",
    "closure_errors",
    "trajectory_errors",
    "stage_errors",
    "compute_metrics",
]

logger = logging.getLogger(__name__)

STAGES = ("raw", "pcm", "dpgo", "trajectory", "dead_reckoning")


class MetricsError(ValueError):
    pass


@dataclass
class StageErrors:
    """
    Error summary of one pipeline stage. Translation in meters, rotation in
    degrees; ``*_mse`` are the mean squared errors next to the mean and std of
    the absolute errors.
    """
    count: int = 0
    trans_mean: float = math.nan
    trans_std: float = math.nan
    trans_mse: float = math.nan
    trans_max: float = math.nan
    rot_mean: float = math.nan
    rot_std: float = math.nan
    rot_mse: float = math.nan
    rot_max: float = math.nan

    @classmethod
    def from_errors(cls, trans: Sequence[float], rot_deg: Sequence[float]) -> "StageErrors":
        trans = np.abs(np.asarray(trans, dtype=float))
        rot = np.abs(np.asarray(rot_deg, dtype=float))
        if not len(trans):
            return cls()
        return cls(count=len(trans),
                   trans_mean=float(trans.mean()), trans_std=float(trans.std()),
                   trans_mse=float(np.mean(trans ** 2)), trans_max=float(trans.max()),
                   rot_mean=float(rot.mean()), rot_std=float(rot.std()),
                   rot_mse=float(np.mean(rot ** 2)), rot_max=float(rot.max()))

    def to_text(self) -> str:
        if not self.count:
            return "n/a"
        return (f"{self.trans_mean:.4f} ± {self.trans_std:.4f} m (mse {self.trans_mse:.5f}), "
                f"{self.rot_mean:.3f} ± {self.rot_std:.3f} deg (mse {self.rot_mse:.4f}), n={self.count}")


@dataclass
class MetricsReport:
    stages: Dict[str, StageErrors] = field(default_factory=dict)
    raw_closures: int = 0
    inlier_closures: int = 0
    timings_ms: Dict[str, float] = field(default_factory=dict)
    bytes_total: int = 0
    bytes_by_kind: Dict[str, int] = field(default_factory=dict)
    dpgo_rounds: int = 0
    final_cost: float = math.nan

    def stage(self, name: str) -> StageErrors:
        return self.stages.get(name, StageErrors())

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        return _finite(data)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MetricsReport":
        def number(value):
            return math.nan if value is None else value

        stages = {name: StageErrors(**{k: number(v) for k, v in values.items()})
                  for name, values in data.get("stages", {}).items()}
        return cls(stages=stages,
                   raw_closures=int(data.get("raw_closures", 0)),
                   inlier_closures=int(data.get("inlier_closures", 0)),
                   timings_ms=dict(data.get("timings_ms", {})),
                   bytes_total=int(data.get("bytes_total", 0)),
                   bytes_by_kind=dict(data.get("bytes_by_kind", {})),
                   dpgo_rounds=int(data.get("dpgo_rounds", 0)),
                   final_cost=number(data.get("final_cost")))

    def to_text(self) -> str:
        lines = ["stage           error (mean ± std)"]
        for name in STAGES:
            if name in self.stages:
                lines.append(f"{name:<16}{self.stages[name].to_text()}")
        lines.append(f"closures        {self.raw_closures} raw, {self.inlier_closures} consistent")
        if self.dpgo_rounds:
            lines.append(f"dpgo            {self.dpgo_rounds} rounds, final cost {self.final_cost:.6g}")
        if self.bytes_total:
            lines.append(f"communication   {self.bytes_total} bytes ({self.bytes_total / 1e6:.4f} MB)")
            for kind, size in sorted(self.bytes_by_kind.items()):
                lines.append(f"  {kind:<14}{size} bytes")
        for name, ms in sorted(self.timings_ms.items()):
            lines.append(f"time {name:<11}{ms:.3f} ms median")
        return "\n".join(lines) + "\n"


def _finite(value):
    """NaN and inf become None so the report stays valid JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


def align_se2(source: np.ndarray, target: np.ndarray) -> Pose2:
    """
    Rigid SE(2) transform ``T`` minimizing ``sum |T(source_i) - target_i|^2``
    over 2-D points (closed-form least squares, no scale).
    """
    source = np.asarray(source, dtype=float)[:, :2]
    target = np.asarray(target, dtype=float)[:, :2]
    if len(source) != len(target):
        raise MetricsError(f"cannot align {len(source)} points to {len(target)}")
    if not len(source):
        raise MetricsError("no points to align")
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    s, t = source - mu_s, target - mu_t
    angle = math.atan2(float(np.sum(s[:, 0] * t[:, 1] - s[:, 1] * t[:, 0])),
                       float(np.sum(s[:, 0] * t[:, 0] + s[:, 1] * t[:, 1])))
    c, sn = math.cos(angle), math.sin(angle)
    tx = mu_t[0] - (c * mu_s[0] - sn * mu_s[1])
    ty = mu_t[1] - (sn * mu_s[0] + c * mu_s[1])
    return Pose2(tx, ty, angle)


def _relative_errors(estimated: np.ndarray, true: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    trans = np.linalg.norm(estimated[:, :2] - true[:, :2], axis=1)
    rot = np.degrees(np.abs(wrap_angles(estimated[:, 2] - true[:, 2])))
    return trans, rot


def _pose_at(traj: Trajectory, t: float, tolerance: float) -> Optional[np.ndarray]:
    try:
        return traj.interpolate(t, tolerance).as_array()
    except OdometryLookupError:
        return None


def closure_errors(closures: Iterable[LoopClosure], truth: GroundTruth,
                   estimates: Mapping[RobotId, Trajectory] = None,
                   tolerance: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """
    Relative-pose errors at closure instants against the truth-derived relative
    pose. Without ``estimates`` the closures' own poses are scored; with them the
    relative pose between the two estimated trajectories at each closure time is
    (closures whose robots lack a pose there are skipped).
    """
    estimated, true = [], []
    for lc in closures:
        src, tgt = lc.source, lc.target
        if src not in truth or tgt not in truth:
            continue
        a, b = _pose_at(truth[src], lc.t, tolerance), _pose_at(truth[tgt], lc.t, tolerance)
        if a is None or b is None:
            continue
        if estimates is None:
            estimated.append(lc.pose.as_array())
        else:
            if src not in estimates or tgt not in estimates:
                continue
            ea, eb = _pose_at(estimates[src], lc.t, tolerance), _pose_at(estimates[tgt], lc.t, tolerance)
            if ea is None or eb is None:
                continue
            estimated.append(between_many(ea[None], eb[None])[0])
        true.append(between_many(a[None], b[None])[0])
    if not true:
        return np.zeros(0), np.zeros(0)
    return _relative_errors(np.array(estimated), np.array(true))


def trajectory_errors(estimates: Mapping[RobotId, Trajectory], truth: GroundTruth,
                      groups: Sequence[Sequence[RobotId]] = None,
                      tolerance: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """
    Absolute errors of every estimated pose after one SE(2) best-fit per group
    of robots (all robots jointly by default).

    Raises:
        MetricsError: no estimate timestamp falls within the truth.
    """
    robots = sorted(r for r in estimates if r in truth and estimates[r])
    groups = [robots] if groups is None else [[r for r in g if r in robots] for g in groups]
    trans, rot = [], []
    for group in groups:
        est_rows, true_rows = [], []
        for robot in group:
            traj, ref = estimates[robot], truth[robot]
            times = traj.times
            inside = (times >= ref.start_time - tolerance) & (times <= ref.end_time + tolerance)
            if not inside.any():
                continue
            est_rows.append(traj.poses[inside])
            true_rows.append(ref.interpolate_many(times[inside], tolerance))
        if not est_rows:
            continue
        est, true = np.concatenate(est_rows), np.concatenate(true_rows)
        transform = align_se2(est, true)
        aligned = compose_many(transform.as_array(), est)
        t, r = _relative_errors(aligned, true)
        trans.append(t)
        rot.append(r)
    if not trans:
        raise MetricsError("estimates and ground truth have no overlapping timestamps")
    return np.concatenate(trans), np.concatenate(rot)


def stage_errors(trans: Sequence[float], rot_deg: Sequence[float]) -> StageErrors:
    return StageErrors.from_errors(trans, rot_deg)


def compute_metrics(truth: GroundTruth, raw: Sequence[LoopClosure] = (), inliers: Sequence[LoopClosure] = (),
                    trajectories: Mapping[RobotId, Trajectory] = None,
                    dead_reckoning: Mapping[RobotId, Trajectory] = None,
                    anchored: Sequence[RobotId] = None,
                    timings: Mapping[str, float] = None, comm=None,
                    cost_trace: Sequence = ()) -> MetricsReport:
    """
    Stage-wise errors of a run against ground truth.

    ``raw`` and ``pcm`` score the closures themselves, ``dpgo`` the relative
    pose of the optimized trajectories at the consistent closure instants,
    ``trajectory`` the optimized trajectories after alignment and
    ``dead_reckoning`` the odometry-only baseline the same way. Robots listed
    in ``anchored`` share one alignment; every other robot is aligned on its own.

    Raises:
        MetricsError: there is no ground truth.
    """
    if not truth:
        raise MetricsError("metrics need ground truth")
    report = MetricsReport(raw_closures=len(raw), inlier_closures=len(inliers))
    report.stages["raw"] = StageErrors.from_errors(*closure_errors(raw, truth))
    report.stages["pcm"] = StageErrors.from_errors(*closure_errors(inliers, truth))
    if trajectories:
        report.stages["dpgo"] = StageErrors.from_errors(*closure_errors(inliers, truth, trajectories))
        groups = None
        if anchored is not None:
            joint = [r for r in sorted(trajectories) if r in set(anchored)]
            groups = [joint] + [[r] for r in sorted(trajectories) if r not in set(anchored)]
        report.stages["trajectory"] = StageErrors.from_errors(*trajectory_errors(trajectories, truth, groups))
    if dead_reckoning:
        report.stages["dead_reckoning"] = StageErrors.from_errors(*trajectory_errors(dead_reckoning, truth))
    if timings:
        report.timings_ms = dict(timings)
    if comm is not None:
        report.bytes_total = int(comm.total_bytes)
        report.bytes_by_kind = {str(kind): int(stats.bytes) for kind, stats in comm.kinds.items()}
    if cost_trace:
        report.dpgo_rounds = len(cost_trace)
        report.final_cost = float(cost_trace[-1].cost)
    logger.debug(f"metrics: {report.stage('trajectory').to_text()}")
    return report
