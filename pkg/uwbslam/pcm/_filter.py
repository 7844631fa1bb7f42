import logging
from collections import defaultdict
from typing import Dict, List, Sequence

from ..config import PcmConfig
from ..config.slam_types import RobotPair
from ..utils import time_exec
from ._clique import max_clique_exact, max_clique_incremental
from ._consistency import ConsistencyGraph, OdometryAccess, build_consistency_graph, update_consistency_graph

__all__ = ["PcmPairState", "filter_inliers"]

logger = logging.getLogger(__name__)


def _solve(graph: ConsistencyGraph, cfg: PcmConfig, previous=()) -> List[int]:
    if len(graph) <= cfg.exact_cap:
        return max_clique_exact(graph, cfg.exact_cap)
    return max_clique_incremental(graph, previous, cfg.heuristic_restarts)


class PcmPairState:
    """Incremental consistency graph and current inlier clique of one robot pair."""

    def __init__(self, pair: RobotPair, cfg: PcmConfig = None):
        self.cfg = cfg or PcmConfig()
        self.graph = ConsistencyGraph(pair, self.cfg)
        self.clique: List[int] = []

    @property
    def pair(self):
        return self.graph.pair

    @time_exec(name="pcm")
    def update(self, lc, odometry: OdometryAccess) -> List[int]:
        update_consistency_graph(self.graph, lc, odometry)
        self.clique = _solve(self.graph, self.cfg, self.clique)
        logger.debug(f"pcm {self.pair}: {len(self.clique)} of {len(self.graph)} closures consistent")
        return self.clique

    @property
    def inliers(self) -> List:
        return [self.graph.nodes[i] for i in self.clique]


def filter_inliers(closures: Sequence, odometry: OdometryAccess, cfg: PcmConfig = None) -> List:
    """
    Keeps, for every ordered robot pair, the largest pairwise-consistent subset of
    its closures (exact under ``cfg.exact_cap`` closures, heuristic above).
    Returns the union ordered by (source, target, t, uid).
    """
    cfg = cfg or PcmConfig()
    groups: Dict[RobotPair, List] = defaultdict(list)
    for lc in closures:
        groups[lc.pair].append(lc)
    inliers = []
    for pair in sorted(groups):
        members = sorted(groups[pair], key=lambda lc: (lc.t, lc.uid))
        graph = build_consistency_graph(members, odometry, cfg, pair=pair)
        clique = _solve(graph, cfg)
        logger.info(f"pcm {pair}: kept {len(clique)} of {len(members)} closures")
        inliers.extend(members[i] for i in clique)
    return inliers
