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
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..config import PcmConfig
from ..config.slam_types import RobotPair
from ..geometry import Covariance3, Pose2, between, compose, inverse, mahalanobis_squared
from ..scenario import OdometryLookupError, Trajectory

__all__ = [
    "PairMismatchError",
    "OdometryAccess",
    "ConsistencyGraph",
    "cycle_residual",
    "pairwise_consistent",
    "update_consistency_graph",
    "build_consistency_graph",
]

logger = logging.getLogger(__name__)


class PairMismatchError(ValueError):
    def __init__(self, expected: RobotPair, got: RobotPair):
        super().__init__(f"Loop closure connects robots {got}, expected the pair {expected}.")


class OdometryAccess:
    """
    Relative odometry of each robot between two instants, read from the stored
    streams. Timestamps are matched to the nearest sample within one sample period.
    """

    def __init__(self, streams: Mapping[int, Trajectory], period: Optional[float] = None):
        self._streams = streams
        self._period = period

    def _tolerance(self, robot: int) -> float:
        if self._period is not None:
            return self._period
        times = self._streams[robot].times
        if len(times) < 2:
            return 0.0
        return float(np.median(np.diff(times)))

    def relative(self, robot: int, t_from: float, t_to: float) -> Pose2:
        if robot not in self._streams:
            raise OdometryLookupError(t_from, f"no odometry for robot {robot}")
        stream = self._streams[robot]
        tol = self._tolerance(robot)
        return between(stream.nearest(t_from, tol), stream.nearest(t_to, tol))


def cycle_residual(lc_k, lc_i, odom_alpha_ki: Pose2, odom_beta_ik: Pose2) -> np.ndarray:
    """odom_alpha(k->i) ⊕ lc_i ⊕ odom_beta(i->k) ⊖ lc_k, identity when everything agrees."""
    cycle = compose(compose(compose(odom_alpha_ki, lc_i.pose), odom_beta_ik), inverse(lc_k.pose))
    return cycle.as_array()


def _check_pair(lc_k, lc_i):
    if lc_k.pair != lc_i.pair:
        raise PairMismatchError(lc_k.pair, lc_i.pair)


def pairwise_consistent(lc_k, lc_i, odom_alpha_ki: Pose2, odom_beta_ik: Pose2, cfg: PcmConfig) -> bool:
    """
    Chi-squared gate on the loop formed by two closures of the same robot pair and
    the odometry of both robots between them:
    ``mahalanobis(cycle, sigma)**2 <= chi2_quantile(epsilon, 3)``.

    Raises:
        PairMismatchError: the closures connect different robot pairs.
    """
    _check_pair(lc_k, lc_i)
    cycle = cycle_residual(lc_k, lc_i, odom_alpha_ki, odom_beta_ik)
    return mahalanobis_squared(cycle, Covariance3(cfg.covariance())) <= cfg.threshold()


class ConsistencyGraph:
    """
    Closures of one ordered robot pair in insertion order and their symmetric
    pairwise-consistency adjacency (diagonal true). ``bitsets[i]`` has bit ``j``
    set when closures ``i`` and ``j`` (``i != j``) are consistent.
    """

    def __init__(self, pair: RobotPair, cfg: PcmConfig = None):
        self.pair = tuple(pair)
        self.cfg = cfg or PcmConfig()
        self.nodes: List = []
        self._adjacency = np.ones((0, 0), dtype=bool)
        self.bitsets: List[int] = []
        self._cov = Covariance3(self.cfg.covariance())
        self._threshold = self.cfg.threshold()

    def __len__(self):
        return len(self.nodes)

    @property
    def adjacency(self) -> np.ndarray:
        view = self._adjacency.view()
        view.setflags(write=False)
        return view

    def consistent(self, a, b, odometry: OdometryAccess) -> bool:
        """Gate for two closures, evaluated with the earlier one (by time, then uid) as ``k``."""
        _check_pair(a, b)
        lc_k, lc_i = (a, b) if (a.t, a.uid) <= (b.t, b.uid) else (b, a)
        alpha, beta = self.pair
        try:
            odom_alpha_ki = odometry.relative(alpha, lc_k.t, lc_i.t)
            odom_beta_ik = odometry.relative(beta, lc_i.t, lc_k.t)
        except OdometryLookupError as err:
            logger.debug(f"pair {self.pair}: closures {lc_k.uid}/{lc_i.uid} not comparable ({err})")
            return False
        cycle = cycle_residual(lc_k, lc_i, odom_alpha_ki, odom_beta_ik)
        return mahalanobis_squared(cycle, self._cov) <= self._threshold

    def append(self, lc, row: Sequence[bool]) -> int:
        if lc.pair != self.pair:
            raise PairMismatchError(self.pair, lc.pair)
        n = len(self.nodes)
        grown = np.ones((n + 1, n + 1), dtype=bool)
        grown[:n, :n] = self._adjacency
        grown[n, :n] = row
        grown[:n, n] = row
        self._adjacency = grown
        bits = 0
        for j, ok in enumerate(row):
            if ok:
                bits |= 1 << j
                self.bitsets[j] |= 1 << n
        self.bitsets.append(bits)
        self.nodes.append(lc)
        return n

    def is_clique(self, indices) -> bool:
        indices = list(indices)
        return all(self._adjacency[a, b] for a in indices for b in indices)

    def to_text(self) -> str:
        header = f"# pair {self.pair[0]}->{self.pair[1]}, {len(self)} closures (uids: " \
                 f"{' '.join(str(lc.uid) for lc in self.nodes)})"
        rows = ["".join("1" if v else "0" for v in row) for row in self._adjacency]
        return "\n".join([header] + rows) + "\n"


def update_consistency_graph(graph: ConsistencyGraph, new_lc, odometry: OdometryAccess) -> ConsistencyGraph:
    """
    Appends ``new_lc`` with one new row/column; only the new row is evaluated and
    existing entries are left untouched. The graph is updated in place and returned.
    """
    row = [graph.consistent(existing, new_lc, odometry) for existing in graph.nodes]
    graph.append(new_lc, row)
    return graph


def build_consistency_graph(closures: Sequence, odometry: OdometryAccess, cfg: PcmConfig = None,
                            pair: RobotPair = None) -> ConsistencyGraph:
    """Batch construction: evaluates every pair from scratch, in the given closure order."""
    closures = list(closures)
    if pair is None:
        if not closures:
            raise ValueError("pair is required for an empty closure list")
        pair = closures[0].pair
    graph = ConsistencyGraph(pair, cfg)
    n = len(closures)
    matrix = np.ones((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            matrix[i, j] = matrix[j, i] = graph.consistent(closures[i], closures[j], odometry)
    for i, lc in enumerate(closures):
        graph.append(lc, matrix[i, :i])
    return graph
