import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..config import NoiseConfig, ParameterError, ScenarioConfig
from ..geometry import Pose2, between_many, compose
from ._trajectory import GroundTruth, Trajectory, generate_trajectories

__all__ = [
    "OdometrySample",
    "RangingMeasurement",
    "Dataset",
    "synthesize_odometry",
    "synthesize_ranging",
    "simulate_dataset",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OdometrySample:
    t: float
    robot: int
    pose: Pose2


@dataclass(frozen=True)
class RangingMeasurement:
    """Distance from ``source`` to ``target`` as reported by ``source``'s UWB node."""
    t: float
    source: int
    target: int
    distance: float

    def __post_init__(self):
        if self.source == self.target:
            raise ParameterError("target", self.target, f"a robot other than {self.source}")
        if not self.distance >= 0:
            raise ParameterError("distance", self.distance, "a non-negative range")


@dataclass
class Dataset:
    odometry: Dict[int, Trajectory]
    ranging: List[RangingMeasurement] = field(default_factory=list)
    truth: Optional[GroundTruth] = None

    @property
    def robots(self) -> List[int]:
        robots = set(self.odometry)
        if self.truth:
            robots.update(self.truth)
        return sorted(robots)

    def odometry_samples(self) -> List[OdometrySample]:
        """All odometry records ordered by (t, robot)."""
        samples = [OdometrySample(t, robot, pose)
                   for robot, traj in self.odometry.items() for t, pose in traj.items()]
        samples.sort(key=lambda s: (s.t, s.robot))
        return samples


def _require_uwb_sampling(truth: GroundTruth, cfg: NoiseConfig) -> None:
    """Truth streams must start together and be sampled every ``1 / uwb_rate`` seconds."""
    period = 1.0 / cfg.uwb_rate
    start = None
    for robot in sorted(truth):
        times = truth[robot].times
        if not len(times):
            continue
        if len(times) > 1 and not np.allclose(np.diff(times), period, rtol=0.0, atol=1e-6):
            raise ParameterError("truth", robot, f"a trajectory sampled every {period:g} s (uwb_rate)")
        if start is None:
            start = times[0]
        elif abs(times[0] - start) > 1e-6:
            raise ParameterError("truth", robot, f"a trajectory starting at t={start:g} like the others")


def synthesize_odometry(truth: GroundTruth, cfg: NoiseConfig) -> Dict[int, Trajectory]:
    """
    Integrates the true relative motions between consecutive odometry instants,
    each perturbed in the body frame by N(0, odom_trans_sigma^2) on x and y and
    N(0, odom_rot_sigma^2) on theta. Every stream starts at the identity, the
    robot's private odometry frame.

    Raises:
        ParameterError: the truth is not sampled at ``uwb_rate``.
    """
    _require_uwb_sampling(truth, cfg)
    step = cfg.odom_step
    out = {}
    for robot in sorted(truth):
        traj = truth[robot]
        idx = np.arange(0, len(traj), step)
        times = traj.times[idx]
        poses = traj.poses[idx]
        increments = between_many(poses[:-1], poses[1:])
        rng = np.random.default_rng([cfg.rng_seed, 1, robot])
        if cfg.odom_trans_sigma > 0:
            increments[:, :2] += rng.normal(0.0, cfg.odom_trans_sigma, size=(len(increments), 2))
        if cfg.odom_rot_sigma > 0:
            increments[:, 2] += rng.normal(0.0, cfg.odom_rot_sigma, size=len(increments))
        current = Pose2.identity()
        integrated = [current.as_tuple()]
        for inc in increments:
            current = compose(current, Pose2(*inc))
            integrated.append(current.as_tuple())
        out[robot] = Trajectory.from_arrays(times, np.array(integrated))
    return out


def synthesize_ranging(truth: GroundTruth, cfg: NoiseConfig) -> List[RangingMeasurement]:
    """
    One sample per ordered robot pair at every truth instant where the pair is
    within ``max_range``: true distance plus N(0, uwb_sigma^2) plus, with
    probability ``nlos_probability``, an Exp(nlos_bias_scale) positive bias.
    Negative results are clamped to 0. Records are ordered by (t, source, target).

    Raises:
        ParameterError: the truth is not sampled at ``uwb_rate``.
    """
    _require_uwb_sampling(truth, cfg)
    robots = sorted(truth)
    t_parts, s_parts, v_parts = [], [], []
    for a in robots:
        for b in robots:
            if a == b:
                continue
            pa, pb = truth[a].poses, truth[b].poses
            n = min(len(pa), len(pb))
            true = np.sqrt((pa[:n, 0] - pb[:n, 0]) ** 2 + (pa[:n, 1] - pb[:n, 1]) ** 2)
            rng = np.random.default_rng([cfg.rng_seed, 2, a, b])
            gauss = rng.normal(0.0, cfg.uwb_sigma, n) if cfg.uwb_sigma > 0 else np.zeros(n)
            nlos = rng.random(n) < cfg.nlos_probability
            bias = rng.exponential(cfg.nlos_bias_scale, n) if cfg.nlos_bias_scale > 0 else np.zeros(n)
            measured = np.maximum(true + gauss + np.where(nlos, bias, 0.0), 0.0)
            keep = np.flatnonzero(true <= cfg.max_range)
            t_parts.append(truth[a].times[keep])
            s_parts.append(np.full((len(keep), 2), (a, b)))
            v_parts.append(measured[keep])
    if not t_parts:
        return []
    times = np.concatenate(t_parts)
    pairs = np.concatenate(s_parts)
    values = np.concatenate(v_parts)
    order = np.lexsort((pairs[:, 1], pairs[:, 0], times))
    return [RangingMeasurement(float(times[i]), int(pairs[i, 0]), int(pairs[i, 1]), float(values[i]))
            for i in order]


def simulate_dataset(scenario: ScenarioConfig, noise: NoiseConfig) -> Dataset:
    truth = generate_trajectories(scenario.n_robots, scenario.duration, scenario.speed_limit,
                                  (scenario.arena_width, scenario.arena_height), scenario.seed,
                                  rate=noise.uwb_rate)
    dataset = Dataset(odometry=synthesize_odometry(truth, noise),
                      ranging=synthesize_ranging(truth, noise),
                      truth=truth)
    logger.info(f"simulated {scenario.n_robots} robots for {scenario.duration:g} s: "
                f"{sum(len(o) for o in dataset.odometry.values())} odometry and "
                f"{len(dataset.ranging)} ranging samples")
    return dataset
