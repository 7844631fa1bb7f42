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
from typing import List, NamedTuple, Tuple

import numpy as np

from ..config import ParameterError, SearchConfig
from ..geometry import Pose2, as_pose, compose_many, wrap_angles
from ._window import RangingWindow

__all__ = [
    "SearchResult",
    "residual",
    "candidate_grid",
    "coarse_search",
    "residual_grid",
    "local_minima",
    "count_local_minima",
    "Rivals",
    "far_cells",
    "rival_minima",
]

logger = logging.getLogger(__name__)


class SearchResult(NamedTuple):
    pose: Pose2
    residual: float
    index: Tuple[int, int]
    evaluated: int


def _require_entries(window: RangingWindow):
    if len(window) == 0:
        raise ParameterError("window", 0, "a non-empty ranging window")


def residual(candidate: Pose2, window: RangingWindow) -> float:
    """
    Sum over the window of (r_i - ||pos(rel_alpha_i) - pos(candidate ⊕ rel_beta_i)||)^2.
    """
    _require_entries(window)
    c = as_pose(candidate).as_array()
    beta = compose_many(c, window.rel_beta)
    diff = window.rel_alpha[:, :2] - beta[:, :2]
    d = np.sqrt(np.sum(diff * diff, axis=1))
    e = window.ranges - d
    return float(np.sum(e * e))


def candidate_grid(radius: float, cfg: SearchConfig):
    """
    Polar candidates <r cos(delta i_phi), r sin(delta i_phi), delta i_theta> for
    i_phi, i_theta in [-w, w]. Flattened with i_phi as the outer loop:
    ``index = (i_phi + w) * (2w + 1) + (i_theta + w)``.
    """
    w = cfg.w
    steps = np.arange(-w, w + 1)
    phi = np.repeat(steps, 2 * w + 1) * cfg.delta
    theta = np.tile(steps, 2 * w + 1) * cfg.delta
    return radius * np.cos(phi), radius * np.sin(phi), wrap_angles(theta)


class _GridEvaluator:
    """Per-column residual terms of every grid candidate, using only + - * and sqrt."""

    def __init__(self, window: RangingWindow, cfg: SearchConfig):
        radius = window.latest_range if cfg.radius_mode == "latest" else window.median_range
        self.cx, self.cy, self.ctheta = candidate_grid(radius, cfg)
        self.cos = np.cos(self.ctheta)
        self.sin = np.sin(self.ctheta)
        self.window = window

    def term(self, idx, i: int) -> np.ndarray:
        ax, ay = self.window.rel_alpha[i, 0], self.window.rel_alpha[i, 1]
        bx, by = self.window.rel_beta[i, 0], self.window.rel_beta[i, 1]
        c, s = self.cos[idx], self.sin[idx]
        px = self.cx[idx] + c * bx - s * by - ax
        py = self.cy[idx] + s * bx + c * by - ay
        e = self.window.ranges[i] - np.sqrt(px * px + py * py)
        return e * e

    def accumulate(self, idx, partial: np.ndarray, start: int, stop: int) -> np.ndarray:
        for i in range(start, stop):
            partial = partial + self.term(idx, i)
        return partial

    def pose(self, k: int) -> Pose2:
        return Pose2(self.cx[k], self.cy[k], self.ctheta[k])


def _grid_index(k: int, w: int) -> Tuple[int, int]:
    return k // (2 * w + 1) - w, k % (2 * w + 1) - w


def coarse_search(window: RangingWindow, cfg: SearchConfig, early_abort: bool = True,
                  chunk_size: int = 8) -> SearchResult:
    """
    Minimum-residual candidate of the polar grid centred on the latest range.

    With ``early_abort`` the window is consumed ``chunk_size`` samples at a time.
    The full residual of the best candidate after the first chunk becomes the
    bound; a candidate is dropped once its partial sum exceeds the bound, or
    equals it while coming later in loop order. Partial sums only grow and the
    accumulation order per candidate is fixed, so the survivor with the smallest
    full residual is bit-for-bit the first argmin of the exhaustive scan.
    """
    _require_entries(window)
    evaluator = _GridEvaluator(window, cfg)
    n, k_total = len(window), len(evaluator.cx)
    if not early_abort:
        total = evaluator.accumulate(slice(None), np.zeros(k_total), 0, n)
        best = int(np.argmin(total))
        return SearchResult(evaluator.pose(best), float(total[best]), _grid_index(best, cfg.w), k_total * n)

    chunk_size = max(1, int(chunk_size))
    alive = np.arange(k_total)
    stop = min(chunk_size, n)
    partial = evaluator.accumulate(alive, np.zeros(k_total), 0, stop)
    evaluated = k_total * stop
    seed = int(alive[int(np.argmin(partial))])
    bound = float(evaluator.accumulate(np.array([seed]), partial[[seed]], stop, n)[0])
    evaluated += n - stop
    while True:
        keep = (partial < bound) | ((partial == bound) & (alive <= seed))
        alive, partial = alive[keep], partial[keep]
        if stop >= n:
            break
        start, stop = stop, min(stop + chunk_size, n)
        partial = evaluator.accumulate(alive, partial, start, stop)
        evaluated += len(alive) * (stop - start)
    j = int(np.argmin(partial))
    best = int(alive[j])
    logger.debug(f"coarse search kept {len(alive)} of {k_total} candidates, {evaluated} terms")
    return SearchResult(evaluator.pose(best), float(partial[j]), _grid_index(best, cfg.w), evaluated)


def _landscape(window: RangingWindow, cfg: SearchConfig):
    _require_entries(window)
    evaluator = _GridEvaluator(window, cfg)
    total = evaluator.accumulate(slice(None), np.zeros(len(evaluator.cx)), 0, len(window))
    return evaluator, total.reshape(cfg.size, cfg.size)


def residual_grid(window: RangingWindow, cfg: SearchConfig):
    """
    Exhaustive residual landscape.

    Returns:
        (phi values, theta values, residual array indexed [i_phi + w, i_theta + w])
    """
    _, grid = _landscape(window, cfg)
    steps = np.arange(-cfg.w, cfg.w + 1) * cfg.delta
    return steps, steps.copy(), grid


def local_minima(grid: np.ndarray) -> List[Tuple[int, int]]:
    """Cells strictly lower than all of their (up to 8) neighbours."""
    grid = np.asarray(grid, dtype=float)
    padded = np.pad(grid, 1, mode="constant", constant_values=np.inf)
    rows, cols = grid.shape
    is_min = np.ones(grid.shape, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            neighbour = padded[1 + di:1 + di + rows, 1 + dj:1 + dj + cols]
            is_min &= grid < neighbour
    return [tuple(int(v) for v in ij) for ij in np.argwhere(is_min)]


def count_local_minima(grid: np.ndarray) -> int:
    return len(local_minima(grid))


class Rivals(NamedTuple):
    seeds: List[SearchResult]
    runner_up: float


def far_cells(index: Tuple[int, int], cfg: SearchConfig, separation: float) -> np.ndarray:
    """Mask of the grid cells whose phi or theta lies more than ``separation`` radians from ``index`` (wrapped)."""
    steps = np.arange(-cfg.w, cfg.w + 1) * cfg.delta
    dphi = np.abs(wrap_angles(steps - index[0] * cfg.delta))
    dtheta = np.abs(wrap_angles(steps - index[1] * cfg.delta))
    return np.maximum(dphi[:, None], dtheta[None, :]) > separation


def rival_minima(window: RangingWindow, cfg: SearchConfig, best: Tuple[int, int], separation: float,
                 limit: int = 3) -> Rivals:
    """
    Competing basins of the landscape around the ``best`` grid index.

    Returns:
        up to ``limit`` grid local minima farther than ``separation`` from
        ``best``, lowest first, and the lowest residual of any cell that far
        (``inf`` when there is none).
    """
    evaluator, grid = _landscape(window, cfg)
    far = far_cells(best, cfg, separation)
    if not far.any():
        return Rivals([], math.inf)
    runner_up = float(grid[far].min())
    minima = sorted((ij for ij in local_minima(grid) if far[ij]), key=lambda ij: grid[ij])[:max(0, int(limit))]
    seeds = [SearchResult(evaluator.pose(i * cfg.size + j), float(grid[i, j]), (i - cfg.w, j - cfg.w), 0)
             for i, j in minima]
    return Rivals(seeds, runner_up)
