import logging
import warnings
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from ..config import DpgoConfig
from ..config.slam_types import NodeKey
from ..geometry import Pose2, compose, inverse, wrap_angles
from ._graph import Edge, PoseGraph, edge_residuals

__all__ = [
    "DisconnectedGraphError",
    "SolveResult",
    "solve_graph",
    "local_block_optimize",
    "centralized_solve",
    "anchor_gauge",
    "unreachable_nodes",
]

logger = logging.getLogger(__name__)

_LAMBDA_MIN = 1e-12
_LAMBDA_MAX = 1e12
_DIAG_FLOOR = 1e-9


class DisconnectedGraphError(ValueError):
    def __init__(self, unreachable: Sequence[NodeKey]):
        self.unreachable = list(unreachable)
        shown = ", ".join(str(k) for k in self.unreachable[:10])
        more = f" and {len(self.unreachable) - 10} more" if len(self.unreachable) > 10 else ""
        super().__init__(f"{len(self.unreachable)} nodes are not connected to the anchor: {shown}{more}")


@dataclass
class SolveResult:
    poses: Dict[NodeKey, Pose2]
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    singular: bool = False
    step_norm: float = 0.0


class _Problem:
    """Edges packed into arrays, free nodes mapped to 3-column blocks."""

    def __init__(self, poses: Mapping[NodeKey, Pose2], edges: Sequence[Edge], free: Sequence[NodeKey]):
        self.keys = list(poses)
        slot = {k: n for n, k in enumerate(self.keys)}
        self.free = list(free)
        free_slot = {k: n for n, k in enumerate(self.free)}
        self.x = np.array([poses[k].as_tuple() for k in self.keys], dtype=float).reshape(-1, 3)
        self.free_rows = np.array([slot[k] for k in self.free], dtype=int)
        self.ii = np.array([slot[e.i] for e in edges], dtype=int)
        self.jj = np.array([slot[e.j] for e in edges], dtype=int)
        self.fi = np.array([free_slot.get(e.i, -1) for e in edges], dtype=int)
        self.fj = np.array([free_slot.get(e.j, -1) for e in edges], dtype=int)
        self.z = np.array([e.z.as_tuple() for e in edges], dtype=float).reshape(-1, 3)
        self.info = np.stack([e.information for e in edges]) if edges else np.zeros((0, 3, 3))

    def cost(self, x: np.ndarray) -> float:
        if not len(self.z):
            return 0.0
        e, _, _ = edge_residuals(x[self.ii], x[self.jj], self.z)
        return float(np.einsum("mi,mij,mj->", e, self.info, e))

    def linearize(self, x: np.ndarray):
        n = 3 * len(self.free)
        e, A, B = edge_residuals(x[self.ii], x[self.jj], self.z)
        cost = float(np.einsum("mi,mij,mj->", e, self.info, e))
        g = np.zeros(n)
        rows, cols, vals = [], [], []
        offsets = np.arange(3)
        for slots_a, J_a in ((self.fi, A), (self.fj, B)):
            mask = slots_a >= 0
            if not mask.any():
                continue
            JtO = np.einsum("mki,mkl->mil", J_a[mask], self.info[mask])
            np.add.at(g, (3 * slots_a[mask])[:, None] + offsets, np.einsum("mil,ml->mi", JtO, e[mask]))
            for slots_b, J_b in ((self.fi, A), (self.fj, B)):
                both = mask & (slots_b >= 0)
                if not both.any():
                    continue
                block = np.einsum("mki,mkl,mlj->mij", J_a[both], self.info[both], J_b[both])
                r = (3 * slots_a[both])[:, None, None] + offsets[None, :, None]
                c = (3 * slots_b[both])[:, None, None] + offsets[None, None, :]
                rows.append(np.broadcast_to(r, block.shape).ravel())
                cols.append(np.broadcast_to(c, block.shape).ravel())
                vals.append(block.ravel())
        if rows:
            H = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                  shape=(n, n)).tocsc()
        else:
            H = sparse.csc_matrix((n, n))
        return H, g, cost

    def retract(self, x: np.ndarray, dx: np.ndarray) -> np.ndarray:
        out = x.copy()
        out[self.free_rows] += dx.reshape(-1, 3)
        out[self.free_rows, 2] = wrap_angles(out[self.free_rows, 2])
        return out

    def poses(self, x: np.ndarray) -> Dict[NodeKey, Pose2]:
        return {k: Pose2(*x[n]) for n, k in enumerate(self.keys)}


def _max_step(dx: np.ndarray) -> float:
    if not len(dx):
        return 0.0
    return float(np.max(np.linalg.norm(dx.reshape(-1, 3), axis=1)))


def solve_graph(poses: Mapping[NodeKey, Pose2], edges: Sequence[Edge], free: Sequence[NodeKey],
                max_iterations: int = 100, damping: float = 1e-4, tolerance: float = 1e-6) -> SolveResult:
    """
    Sparse Levenberg-Marquardt over the ``free`` nodes, the others held fixed.

    Solves ``(H + lambda * diag(H)) dx = -g`` with ``scipy.sparse``; a step is
    kept only if it lowers the cost, otherwise lambda grows tenfold. Steps whose
    largest per-node norm is below ``tolerance`` are not applied and end the
    solve. A system that stays singular up to the damping ceiling leaves the
    poses unchanged and sets ``singular``.
    """
    problem = _Problem(poses, edges, free)
    x = problem.x
    initial = problem.cost(x)
    if not problem.free or not len(problem.z):
        return SolveResult(problem.poses(x), initial, initial, 0, True)
    lam = damping
    cost = initial
    converged = singular = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        H, g, cost = problem.linearize(x)
        if not np.any(g):
            converged = True
            break
        diag = sparse.diags(H.diagonal() + _DIAG_FLOOR)
        accepted = False
        while lam <= _LAMBDA_MAX:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                try:
                    dx = spsolve((H + lam * diag).tocsc(), -g)
                except (RuntimeError, ValueError):
                    dx = np.full_like(g, np.nan)
            dx = np.atleast_1d(dx)
            if not np.all(np.isfinite(dx)):
                lam *= 10.0
                continue
            if _max_step(dx) < tolerance:
                converged = True
                break
            candidate = problem.retract(x, dx)
            new_cost = problem.cost(candidate)
            if new_cost < cost:
                x, cost = candidate, new_cost
                lam = max(lam / 10.0, _LAMBDA_MIN)
                accepted = True
                break
            lam *= 10.0
        if converged:
            break
        if not accepted:
            singular = not np.all(np.isfinite(dx))
            if singular:
                logger.warning(f"normal equations stayed singular over {len(problem.free)} free nodes")
            else:
                converged = True
            break
    else:
        logger.debug(f"solve stopped after {max_iterations} iterations at cost {cost:.6g}")
    cost = problem.cost(x)
    delta = x[problem.free_rows] - problem.x[problem.free_rows]
    delta[:, 2] = wrap_angles(delta[:, 2])
    step = _max_step(delta)
    return SolveResult(problem.poses(x), cost, initial, iterations, converged, singular, step)


def local_block_optimize(fragment: PoseGraph, robot: int, separators: Mapping[NodeKey, Pose2],
                         cfg: DpgoConfig = None) -> Tuple[PoseGraph, float]:
    """
    Optimizes ``robot``'s own nodes of ``fragment`` with the neighbours' separator
    poses held fixed. Loop edges whose far endpoint is missing from
    ``separators`` are left out; the fragment's ``fixed`` nodes stay put.

    Returns:
        the updated fragment and the largest per-node pose change.
    """
    cfg = cfg or DpgoConfig()
    poses = dict(fragment.poses)
    edges = []
    for edge in fragment.edges:
        if edge.i in poses and edge.j in poses:
            edges.append(edge)
            continue
        far = edge.other(robot)
        if far in separators:
            edges.append(edge)
    for edge in edges:
        far = edge.other(robot)
        if far[0] != robot:
            poses[far] = separators[far]
    free = [k for k in fragment.poses if k[0] == robot and k not in fragment.fixed]
    result = solve_graph(poses, edges, free, cfg.inner_iterations, cfg.damping, cfg.tolerance)
    updated = fragment.copy()
    for key in fragment.poses:
        updated.poses[key] = result.poses[key]
    if result.singular:
        logger.warning(f"robot {robot}: local block stayed singular, poses unchanged")
        return fragment.copy(), 0.0
    return updated, result.step_norm


def unreachable_nodes(graph: PoseGraph, start: NodeKey) -> List[NodeKey]:
    adjacency = defaultdict(list)
    for edge in graph.edges:
        adjacency[edge.i].append(edge.j)
        adjacency[edge.j].append(edge.i)
    seen = {start}
    queue = deque([start])
    while queue:
        key = queue.popleft()
        for nxt in adjacency[key]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return sorted(k for k in graph.poses if k not in seen)


def centralized_solve(graph: PoseGraph, cfg: DpgoConfig = None, max_iterations: int = 200) -> Tuple[PoseGraph, float]:
    """
    Batch solve of the whole graph with the anchor fixed. Reference solver for
    tests and benchmarks.

    Raises:
        DisconnectedGraphError: some nodes cannot be reached from the anchor.
    """
    cfg = cfg or DpgoConfig()
    graph.validate()
    anchor = graph.anchor if graph.anchor is not None else min(graph.poses)
    missing = unreachable_nodes(graph, anchor)
    if missing:
        raise DisconnectedGraphError(missing)
    fixed = set(graph.fixed) | {anchor}
    free = [k for k in graph.poses if k not in fixed]
    result = solve_graph(graph.poses, graph.edges, free, max_iterations, cfg.damping, cfg.tolerance)
    logger.debug(f"centralized solve: cost {result.initial_cost:.6g} -> {result.cost:.6g} "
                 f"in {result.iterations} iterations")
    solved = graph.with_poses(result.poses)
    solved.anchor = anchor
    solved.fixed = fixed
    return solved, result.cost


def anchor_gauge(graph: PoseGraph, anchor: Optional[NodeKey] = None) -> PoseGraph:
    """Left-multiplies every pose so that the anchor (robot 0's first node by default) is the identity."""
    if not graph.poses:
        return graph.copy()
    if anchor is None:
        anchor = graph.anchor if graph.anchor is not None else min(graph.poses)
    correction = inverse(graph.poses[anchor])
    out = graph.copy()
    out.poses = {k: compose(correction, p) for k, p in graph.poses.items()}
    out.poses[anchor] = Pose2.identity()
    out.anchor = anchor
    out.fixed.add(anchor)
    return out
