from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from ..config import ParameterError
from ..geometry import between_many
from ..scenario import RangingMeasurement, Trajectory

__all__ = ["RangingWindow", "near_collinear_window"]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RangingWindow:
    """
    The last ``len(window)`` ranging samples between ``source`` (alpha) and
    ``target`` (beta) with both robots' odometry poses expressed relative to
    the window end ``t``. The final entry is the window end, so its relative
    poses are exactly the identity.
    """
    source: int
    target: int
    t: float
    times: np.ndarray
    rel_alpha: np.ndarray
    rel_beta: np.ndarray
    ranges: np.ndarray

    @classmethod
    def from_poses(cls, source: int, target: int, times, alpha_poses, beta_poses, ranges) -> "RangingWindow":
        times = np.asarray(times, dtype=float).reshape(-1)
        alpha_poses = np.asarray(alpha_poses, dtype=float).reshape(-1, 3)
        beta_poses = np.asarray(beta_poses, dtype=float).reshape(-1, 3)
        ranges = np.asarray(ranges, dtype=float).reshape(-1)
        n = len(times)
        if n == 0:
            raise ParameterError("window", 0, "at least one ranging sample")
        if not (len(alpha_poses) == len(beta_poses) == len(ranges) == n):
            raise ParameterError("window", (n, len(alpha_poses), len(beta_poses), len(ranges)),
                                 "equally long times, poses and ranges")
        if n > 1 and np.any(np.diff(times) < 0):
            raise ParameterError("times", times, "non-decreasing timestamps")
        if np.any(ranges < 0):
            raise ParameterError("ranges", float(ranges.min()), "non-negative distances")
        rel_alpha = between_many(alpha_poses[-1], alpha_poses)
        rel_beta = between_many(beta_poses[-1], beta_poses)
        rel_alpha[-1] = 0.0
        rel_beta[-1] = 0.0
        return cls(int(source), int(target), float(times[-1]), _readonly(times),
                   _readonly(rel_alpha), _readonly(rel_beta), _readonly(ranges))

    @classmethod
    def from_streams(cls, odom_alpha: Trajectory, odom_beta: Trajectory,
                     rangings: Sequence[RangingMeasurement]) -> "RangingWindow":
        """Pairs each ranging sample with both robots' odometry interpolated at its timestamp."""
        if not rangings:
            raise ParameterError("rangings", 0, "at least one ranging sample")
        source, target = rangings[0].source, rangings[0].target
        times = np.array([m.t for m in rangings])
        ranges = np.array([m.distance for m in rangings])
        return cls.from_poses(source, target, times,
                              odom_alpha.interpolate_many(times),
                              odom_beta.interpolate_many(times),
                              ranges)

    def __len__(self):
        return len(self.ranges)

    @property
    def latest_range(self) -> float:
        return float(self.ranges[-1])

    @property
    def median_range(self) -> float:
        return float(np.median(self.ranges))

    def path_lengths(self) -> Tuple[float, float]:
        """Distance travelled by alpha and by beta over the window."""
        def length(rel):
            if len(rel) < 2:
                return 0.0
            return float(np.sum(np.sqrt(np.sum(np.diff(rel[:, :2], axis=0) ** 2, axis=1))))
        return length(self.rel_alpha), length(self.rel_beta)


def near_collinear_window(n: int = 50, rate: float = 50.0, source: int = 0, target: int = 1) -> RangingWindow:
    """
    Noise-free window of two robots driving straight along parallel lines 2 m
    apart, alpha at 0.8 m/s and beta at 0.3 m/s starting 1 m ahead. Straight
    parallel motion cannot tell a pose from its mirror image, so the residual
    landscape has separated basins.
    """
    t = np.arange(int(n)) / float(rate)
    alpha = np.column_stack([0.8 * t, np.zeros(len(t)), np.zeros(len(t))])
    beta = np.column_stack([1.0 + 0.3 * t, np.full(len(t), 2.0), np.zeros(len(t))])
    ranges = np.hypot(*(alpha[:, :2] - beta[:, :2]).T)
    return RangingWindow.from_poses(source, target, t, alpha, beta, ranges)
