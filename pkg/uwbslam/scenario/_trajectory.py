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
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from ..config import ParameterError
from ..geometry import Pose2, as_pose, compose, compose_many, inverse, wrap_angle, wrap_angles

__all__ = [
    "Trajectory",
    "GroundTruth",
    "OdometryLookupError",
    "generate_trajectories",
    "max_pairwise_distance",
    "dead_reckoning",
    "transform_trajectories",
]

logger = logging.getLogger(__name__)

# unicycle limits of the random-waypoint driver
MAX_TURN_RATE = 0.6
ARRIVAL_RADIUS = 0.3
ARENA_MARGIN = 1.0


class OdometryLookupError(LookupError):
    def __init__(self, t: float, reason: str):
        self.t = t
        super().__init__(f"No pose for t={t!r}: {reason}")


class Trajectory:
    """
    Timestamped SE(2) poses of one robot, strictly increasing in time.

    Samples live in growable numpy buffers, so appending one sample at a time
    and reading the ``times`` / ``poses`` views in between stays cheap.
    """

    def __init__(self, times: Iterable[float] = (), poses: Iterable = ()):
        times = [float(t) for t in times]
        poses = [as_pose(p).as_tuple() for p in poses]
        if len(times) != len(poses):
            raise ValueError(f"{len(times)} timestamps for {len(poses)} poses")
        for i in range(1, len(times)):
            if not times[i] > times[i - 1]:
                raise ValueError(f"timestamps must be strictly increasing (index {i}: {times[i]!r})")
        self._size = len(times)
        self._t = np.array(times, dtype=float).reshape(-1)
        self._p = np.array(poses, dtype=float).reshape(-1, 3)

    @classmethod
    def from_arrays(cls, times: np.ndarray, poses: np.ndarray) -> "Trajectory":
        times = np.array(times, dtype=float).reshape(-1)
        poses = np.array(poses, dtype=float).reshape(-1, 3)
        if len(times) != len(poses):
            raise ValueError(f"{len(times)} timestamps for {len(poses)} poses")
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("timestamps must be strictly increasing")
        poses[:, 2] = wrap_angles(poses[:, 2])
        traj = cls()
        traj._size, traj._t, traj._p = len(times), times, poses
        return traj

    def __len__(self):
        return self._size

    def __bool__(self):
        return self._size > 0

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.poses, other.poses)

    def __repr__(self):
        span = f"{self.start_time:.3f}..{self.end_time:.3f}" if self else "empty"
        return f"Trajectory({len(self)} poses, t={span})"

    def append(self, t: float, pose) -> None:
        t = float(t)
        if self._size and not t > self._t[self._size - 1]:
            raise ValueError(f"timestamp {t!r} is not after {self._t[self._size - 1]!r}")
        if self._size == len(self._t):
            capacity = max(16, 2 * self._size)
            self._t = np.resize(self._t, capacity)
            self._p = np.resize(self._p, (capacity, 3))
        self._t[self._size] = t
        self._p[self._size] = as_pose(pose).as_tuple()
        self._size += 1

    def _arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        times, poses = self._t[:self._size], self._p[:self._size]
        times.setflags(write=False)
        poses.setflags(write=False)
        return times, poses

    @property
    def times(self) -> np.ndarray:
        return self._arrays()[0]

    @property
    def poses(self) -> np.ndarray:
        return self._arrays()[1]

    @property
    def start_time(self) -> float:
        return float(self._t[0])

    @property
    def end_time(self) -> float:
        return float(self._t[self._size - 1])

    def pose(self, index: int) -> Pose2:
        if not -self._size <= index < self._size:
            raise IndexError(f"pose index {index} out of range for {self._size} poses")
        return Pose2(*self._p[index % self._size])

    def items(self):
        for t, p in zip(self.times.tolist(), self.poses.tolist()):
            yield t, Pose2(*p)

    def nearest_index(self, t: float, tolerance: float = math.inf) -> int:
        """Index of the sample closest to ``t``; ties go to the earlier sample."""
        if not self:
            raise OdometryLookupError(t, "trajectory is empty")
        times = self.times
        i = int(np.searchsorted(times, t))
        candidates = [j for j in (i - 1, i) if 0 <= j < len(times)]
        best = min(candidates, key=lambda j: (abs(times[j] - t), j))
        if abs(times[best] - t) > tolerance:
            raise OdometryLookupError(t, f"nearest sample at {times[best]!r} is beyond {tolerance!r} s")
        return best

    def nearest(self, t: float, tolerance: float = math.inf) -> Pose2:
        return self.pose(self.nearest_index(t, tolerance))

    def interpolate(self, t: float, tolerance: float = 1e-9) -> Pose2:
        """Linear position and shortest-arc heading between the bracketing samples."""
        times, poses = self._arrays()
        if not len(times):
            raise OdometryLookupError(t, "trajectory is empty")
        if t < times[0] - tolerance or t > times[-1] + tolerance:
            raise OdometryLookupError(t, f"outside [{times[0]!r}, {times[-1]!r}]")
        i = int(np.searchsorted(times, t, side="right")) - 1
        if i < 0:
            return self.pose(0)
        if i >= len(times) - 1 or times[i] == t:
            return self.pose(min(i, len(times) - 1))
        a, b = poses[i], poses[i + 1]
        alpha = (t - times[i]) / (times[i + 1] - times[i])
        return Pose2(a[0] + alpha * (b[0] - a[0]),
                     a[1] + alpha * (b[1] - a[1]),
                     a[2] + alpha * wrap_angle(b[2] - a[2]))

    def interpolate_many(self, ts: np.ndarray, tolerance: float = 1e-9) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        times, poses = self._arrays()
        if not len(times):
            raise OdometryLookupError(float(ts[0]) if len(ts) else 0.0, "trajectory is empty")
        if len(ts) and (ts.min() < times[0] - tolerance or ts.max() > times[-1] + tolerance):
            bad = ts.min() if ts.min() < times[0] - tolerance else ts.max()
            raise OdometryLookupError(float(bad), f"outside [{times[0]!r}, {times[-1]!r}]")
        if len(times) == 1:
            return np.repeat(poses[:1], len(ts), axis=0)
        i = np.clip(np.searchsorted(times, ts, side="right") - 1, 0, len(times) - 2)
        alpha = np.clip((ts - times[i]) / (times[i + 1] - times[i]), 0.0, 1.0)
        a, b = poses[i], poses[i + 1]
        out = np.empty((len(ts), 3))
        out[:, 0] = a[:, 0] + alpha * (b[:, 0] - a[:, 0])
        out[:, 1] = a[:, 1] + alpha * (b[:, 1] - a[:, 1])
        out[:, 2] = wrap_angles(a[:, 2] + alpha * wrap_angles(b[:, 2] - a[:, 2]))
        exact = alpha == 1.0
        out[exact] = b[exact]
        exact = alpha == 0.0
        out[exact] = a[exact]
        return out

    def path_length(self, t0: float = -math.inf, t1: float = math.inf) -> float:
        times, poses = self._arrays()
        mask = (times >= t0) & (times <= t1)
        xy = poses[mask, :2]
        if len(xy) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(xy, axis=0), axis=1)))

    def slice(self, t0: float, t1: float) -> "Trajectory":
        times, poses = self._arrays()
        mask = (times >= t0) & (times <= t1)
        return Trajectory.from_arrays(times[mask], poses[mask])

    def transformed(self, pose: Pose2) -> "Trajectory":
        """Left-composes every pose with ``pose``."""
        if not self:
            return Trajectory()
        return Trajectory.from_arrays(self.times, compose_many(as_pose(pose).as_array(), self.poses))

    def copy(self) -> "Trajectory":
        return Trajectory.from_arrays(self.times, self.poses)


GroundTruth = Dict[int, Trajectory]


def _validate_scenario(n_robots, duration, speed_limit, arena):
    if int(n_robots) < 2:
        raise ParameterError("n_robots", n_robots, "at least 2 robots")
    if not duration > 0:
        raise ParameterError("duration", duration, "a positive duration")
    if not speed_limit >= 0:
        raise ParameterError("speed_limit", speed_limit, "a non-negative speed")
    width, height = arena
    if not (width > 0 and height > 0):
        raise ParameterError("arena", arena, "a positive width and height")


def generate_trajectories(n_robots: int, duration: float, speed_limit: float,
                          arena: Tuple[float, float], seed: int, rate: float = 50.0) -> GroundTruth:
    """
    Random-waypoint unicycle paths inside a ``width x height`` arena sampled at
    ``rate`` Hz. Each robot steers toward a random waypoint with a bounded turn
    rate, slows down when facing away from it and never exceeds ``speed_limit``.
    The output is a pure function of the arguments.
    """
    _validate_scenario(n_robots, duration, speed_limit, arena)
    width, height = float(arena[0]), float(arena[1])
    margin = min(ARENA_MARGIN, width / 4.0, height / 4.0)
    rng = np.random.default_rng(seed)
    dt = 1.0 / rate
    n_steps = int(round(duration * rate))
    times = np.arange(n_steps + 1) * dt

    def waypoint():
        return rng.uniform(margin, width - margin), rng.uniform(margin, height - margin)

    truth = {}
    for robot in range(int(n_robots)):
        x, y = waypoint()
        theta = rng.uniform(-math.pi, math.pi)
        goal = waypoint()
        poses = np.empty((n_steps + 1, 3))
        poses[0] = x, y, wrap_angle(theta)
        for k in range(1, n_steps + 1):
            if speed_limit > 0:
                gx, gy = goal
                if math.hypot(gx - x, gy - y) < ARRIVAL_RADIUS:
                    goal = waypoint()
                    gx, gy = goal
                err = wrap_angle(math.atan2(gy - y, gx - x) - theta)
                turn = max(-MAX_TURN_RATE * dt, min(MAX_TURN_RATE * dt, err))
                theta = wrap_angle(theta + turn)
                speed = speed_limit * max(0.0, math.cos(err))
                x = min(max(x + speed * dt * math.cos(theta), 0.0), width)
                y = min(max(y + speed * dt * math.sin(theta), 0.0), height)
            poses[k] = x, y, theta
        truth[robot] = Trajectory.from_arrays(times, poses)
    logger.debug(f"generated {n_robots} trajectories of {n_steps + 1} samples (seed={seed})")
    return truth


def max_pairwise_distance(truth: GroundTruth) -> float:
    """Largest inter-robot distance over the shared timestamp grid."""
    robots = sorted(truth)
    best = 0.0
    for i, a in enumerate(robots):
        for b in robots[i + 1:]:
            pa, pb = truth[a].poses, truth[b].poses
            n = min(len(pa), len(pb))
            if n:
                best = max(best, float(np.max(np.linalg.norm(pa[:n, :2] - pb[:n, :2], axis=1))))
    return best


def dead_reckoning(odometry: Dict[int, Trajectory], truth: GroundTruth) -> Dict[int, Trajectory]:
    """Each robot's odometry rigidly placed at its true starting pose."""
    out = {}
    for robot, odom in odometry.items():
        if not odom:
            out[robot] = Trajectory()
            continue
        start = truth[robot].interpolate(odom.start_time)
        out[robot] = odom.transformed(compose(start, inverse(odom.pose(0))))
    return out


def transform_trajectories(trajectories: Dict[int, Trajectory], pose: Pose2) -> Dict[int, Trajectory]:
    return {robot: traj.transformed(pose) for robot, traj in trajectories.items()}
