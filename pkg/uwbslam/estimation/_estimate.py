import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

from ..config import EstimatorConfig, ParameterError, SearchConfig
from ..config.slam_types import RobotPair
from ..geometry import Covariance3, Pose2, chi2_quantile, wrap_angle
from ..utils import time_exec
from ._refine import refine
from ._search import coarse_search, rival_minima
from ._window import RangingWindow

__all__ = ["LoopClosure", "InsufficientExcitationError", "estimate_relative_pose"]

ESTIMATOR_MODES = ("combined", "coarse", "nls")

# grid basins refined when looking for a competing solution
RIVAL_SEEDS = 3

logger = logging.getLogger(__name__)


class InsufficientExcitationError(ValueError):
    def __init__(self, size: int, min_window: int, paths: Tuple[float, float] = None, min_path: float = 0.0):
        self.size = size
        self.min_window = min_window
        self.paths = paths
        self.min_path = min_path
        if paths is None:
            msg = f"Window of {size} samples is shorter than the minimum of {min_window}."
        else:
            msg = (f"Robots travelled {paths[0]:.3f} m and {paths[1]:.3f} m over the window, "
                   f"below the minimum of {min_path} m.")
        super().__init__(msg)


@dataclass(frozen=True)
class LoopClosure:
    """
    Relative pose of robot ``target`` (beta) in the frame of robot ``source``
    (alpha) at time ``t``, with the covariance PCM and DPGO weigh it by.
    """
    uid: int
    source: int
    target: int
    t: float
    pose: Pose2
    covariance: Covariance3
    residual: float
    window_size: int
    degenerate: bool = False
    converged: bool = True

    @property
    def pair(self) -> RobotPair:
        return self.source, self.target

    def replace(self, **changes) -> "LoopClosure":
        return dataclasses.replace(self, **changes)


def _significant(coarse_res: float, refined_res: float, n: int, significance: float) -> bool:
    """Whether refining lowered the residual by more than the noise explains (chi-squared, 3 dof)."""
    gain = coarse_res - refined_res
    if gain <= 0:
        return False
    if n <= 3:
        return True
    return gain > chi2_quantile(significance, 3) * refined_res / (n - 3)


def _separated(a: Pose2, b: Pose2, separation: float) -> bool:
    dphi = abs(wrap_angle(math.atan2(a.y, a.x) - math.atan2(b.y, b.x)))
    return max(dphi, abs(wrap_angle(a.theta - b.theta))) > separation


@time_exec(name="estimation")
def estimate_relative_pose(window: RangingWindow, cfg: SearchConfig = None,
                           estimator: EstimatorConfig = None, mode: Optional[str] = None,
                           uid: int = 0) -> LoopClosure:
    """
    Coarse polar search followed by Levenberg-Marquardt refinement.

    ``mode`` overrides ``estimator.mode``: ``combined`` (search then refine),
    ``coarse`` (grid only) or ``nls`` (refine from the identity). The refined
    pose replaces the grid pose only when its residual gain is significant at
    ``estimator.refine_significance``.

    With ``estimator.ambiguity_ratio > 0`` the closure is flagged ``degenerate``
    when the landscape holds a second solution: a grid cell farther than
    ``ambiguity_separation`` from the best one that ties with it, or (combined
    mode) a refined rival basin whose residual is within
    ``best * (1 + ambiguity_ratio) + ambiguity_floor * len(window)``. A
    degenerate combined estimate keeps the grid pose. ``nls`` never flags.

    Raises:
        InsufficientExcitationError: the window is shorter than ``estimator.min_window``
            or either robot travelled less than ``estimator.min_excitation``.
        ParameterError: unknown ``mode``.
    """
    cfg = cfg or SearchConfig()
    estimator = estimator or EstimatorConfig()
    mode = mode or estimator.mode
    if mode not in ESTIMATOR_MODES:
        raise ParameterError("mode", mode, f"one of {ESTIMATOR_MODES}")
    n = len(window)
    if n < estimator.min_window:
        raise InsufficientExcitationError(n, estimator.min_window)
    paths = window.path_lengths()
    if min(paths) < estimator.min_excitation:
        raise InsufficientExcitationError(n, estimator.min_window, paths, estimator.min_excitation)

    refine_kwargs = dict(max_iterations=estimator.max_iterations, step_tolerance=estimator.step_tolerance,
                         cost_tolerance=estimator.cost_tolerance, huber_k=estimator.huber_k)
    floor = estimator.ambiguity_floor * n
    degenerate = False
    if mode == "nls":
        pose, res, converged, _ = refine(Pose2.identity(), window, **refine_kwargs)
    else:
        found = coarse_search(window, cfg, early_abort=estimator.early_abort, chunk_size=estimator.chunk_size)
        pose, res, converged = found.pose, found.residual, True
        rivals = None
        if estimator.ambiguity_ratio > 0:
            rivals = rival_minima(window, cfg, found.index, estimator.ambiguity_separation, RIVAL_SEEDS)
            degenerate = rivals.runner_up <= found.residual + floor
        if mode == "combined" and not degenerate:
            refined = refine(found.pose, window, **refine_kwargs)
            if _significant(found.residual, refined.residual, n, estimator.refine_significance):
                pose, res, converged = refined.pose, refined.residual, refined.converged
            bound = res * (1.0 + estimator.ambiguity_ratio) + floor
            for seed in rivals.seeds if rivals is not None else ():
                other = refine(seed.pose, window, **refine_kwargs)
                if other.residual <= bound and _separated(other.pose, pose, 0.5 * estimator.ambiguity_separation):
                    degenerate = True
                    break
            if degenerate:
                pose, res, converged = found.pose, found.residual, True

    if degenerate:
        logger.debug(f"window {window.source}->{window.target} at t={window.t:.3f} is ambiguous, "
                     f"keeping the grid pose {pose}")
    return LoopClosure(uid=uid, source=window.source, target=window.target, t=window.t, pose=pose,
                       covariance=Covariance3(estimator.covariance()), residual=res,
                       window_size=n, degenerate=degenerate, converged=converged)
