import logging
import math
from typing import NamedTuple

import numpy as np

from ..geometry import Pose2, as_pose, wrap_angle
from ._search import residual
from ._window import RangingWindow

__all__ = ["RefineResult", "refine"]

logger = logging.getLogger(__name__)

_LAMBDA_INIT = 1e-3
_LAMBDA_MIN = 1e-12
_LAMBDA_MAX = 1e12


class RefineResult(NamedTuple):
    pose: Pose2
    residual: float
    converged: bool
    iterations: int


def _linearize(x: np.ndarray, window: RangingWindow):
    """Range errors e_i = r_i - d_i and their Jacobian with respect to (x, y, theta)."""
    c, s = math.cos(x[2]), math.sin(x[2])
    bx, by = window.rel_beta[:, 0], window.rel_beta[:, 1]
    px = x[0] + c * bx - s * by - window.rel_alpha[:, 0]
    py = x[1] + s * bx + c * by - window.rel_alpha[:, 1]
    d = np.sqrt(px * px + py * py)
    e = window.ranges - d
    safe = np.where(d > 0, d, 1.0)
    live = d > 0
    # d(R b)/d theta
    rbx = -s * bx - c * by
    rby = c * bx - s * by
    jac = np.zeros((len(d), 3))
    jac[:, 0] = np.where(live, -px / safe, 0.0)
    jac[:, 1] = np.where(live, -py / safe, 0.0)
    jac[:, 2] = np.where(live, -(px * rbx + py * rby) / safe, 0.0)
    return e, jac


def _robust_cost(e: np.ndarray, huber_k: float) -> float:
    if huber_k <= 0:
        return float(np.sum(e * e))
    a = np.abs(e)
    return float(np.sum(np.where(a <= huber_k, e * e, 2.0 * huber_k * a - huber_k * huber_k)))


def _errors(x: np.ndarray, window: RangingWindow) -> np.ndarray:
    return _linearize(x, window)[0]


def refine(initial: Pose2, window: RangingWindow, max_iterations: int = 100, step_tolerance: float = 1e-8,
           cost_tolerance: float = 1e-10, huber_k: float = 0.0) -> RefineResult:
    """
    Levenberg-Marquardt on (x, y, theta) minimizing the windowed range residual.

    A step is only taken when it lowers the cost, so the returned residual never
    exceeds the residual at ``initial`` (with ``huber_k > 0`` the guarantee holds
    for the Huber cost that drives the iterations). Stops when the step norm
    drops below ``step_tolerance`` (the step is not applied), when an accepted
    step changes the cost by less than ``cost_tolerance`` relatively, or after
    ``max_iterations``; only the last case reports ``converged=False``.
    """
    x = as_pose(initial).as_array()
    e, jac = _linearize(x, window)
    cost = _robust_cost(e, huber_k)
    lam = _LAMBDA_INIT
    converged = False
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        if huber_k > 0:
            a = np.abs(e)
            weights = np.where(a <= huber_k, 1.0, huber_k / np.maximum(a, 1e-300))
        else:
            weights = np.ones_like(e)
        jw = jac * weights[:, None]
        hessian = jac.T @ jw
        gradient = jw.T @ e
        damped = hessian + lam * np.diag(np.diag(hessian) + 1e-12)
        try:
            step = -np.linalg.solve(damped, gradient)
        except np.linalg.LinAlgError:
            lam = min(lam * 10.0, _LAMBDA_MAX)
            continue
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) < step_tolerance:
            converged = True
            break
        candidate = x + step
        candidate[2] = wrap_angle(candidate[2])
        new_e, new_jac = _linearize(candidate, window)
        new_cost = _robust_cost(new_e, huber_k)
        if new_cost < cost:
            change = (cost - new_cost) / max(cost, 1e-300)
            x, e, jac, cost = candidate, new_e, new_jac, new_cost
            lam = max(lam / 10.0, _LAMBDA_MIN)
            if change < cost_tolerance:
                converged = True
                break
        else:
            if lam >= _LAMBDA_MAX:
                converged = True
                break
            lam = min(lam * 10.0, _LAMBDA_MAX)
    pose = Pose2(*x)
    logger.debug(f"refine stopped after {iterations} iterations (converged={converged})")
    return RefineResult(pose, residual(pose, window), converged, iterations)
