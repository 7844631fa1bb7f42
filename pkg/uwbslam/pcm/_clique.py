import logging
from itertools import combinations
from typing import Iterable, List, Sequence, Union

import numpy as np

from ._consistency import ConsistencyGraph

__all__ = ["CliqueSizeError", "is_clique", "max_clique_exact", "max_clique_incremental"]

logger = logging.getLogger(__name__)


class CliqueSizeError(ValueError):
    def __init__(self, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(f"Graph of {size} nodes exceeds the exact solver cap of {cap}; use the heuristic.")


def _bitsets(graph: Union[ConsistencyGraph, np.ndarray, Sequence[Sequence[bool]]]) -> List[int]:
    if isinstance(graph, ConsistencyGraph):
        return list(graph.bitsets)
    matrix = np.asarray(graph, dtype=bool)
    bits = []
    for i, row in enumerate(matrix):
        value = 0
        for j in np.flatnonzero(row):
            if j != i:
                value |= 1 << int(j)
        bits.append(value)
    return bits


def _popcount(value: int) -> int:
    return bin(value).count("1")


def _lowest(value: int) -> int:
    return (value & -value).bit_length() - 1


def _members(value: int) -> List[int]:
    out = []
    while value:
        v = _lowest(value)
        out.append(v)
        value &= value - 1
    return out


def is_clique(graph, indices: Iterable[int]) -> bool:
    nbrs = _bitsets(graph)
    indices = list(indices)
    return all((nbrs[a] >> b) & 1 for a, b in combinations(indices, 2))


def _colour_bound(candidates: int, nbrs: List[int]) -> int:
    """Number of colour classes of a greedy colouring: an upper bound on any clique inside ``candidates``."""
    colours = 0
    uncoloured = candidates
    while uncoloured:
        colours += 1
        available = uncoloured
        while available:
            v = _lowest(available)
            available &= ~nbrs[v] & ~(1 << v)
            uncoloured &= ~(1 << v)
    return colours


def max_clique_exact(graph, cap: int = 60) -> List[int]:
    """
    Maximum clique by branch and bound over bitsets with a greedy-colouring bound.

    Vertices are expanded in increasing index order and the incumbent is only
    replaced by a strictly larger clique, so among all maximum cliques the
    lexicographically smallest (as a sorted index list) is returned.

    Raises:
        CliqueSizeError: more than ``cap`` nodes.
    """
    nbrs = _bitsets(graph)
    n = len(nbrs)
    if n > cap:
        raise CliqueSizeError(n, cap)
    best: List[int] = []

    def expand(clique: List[int], candidates: int):
        nonlocal best
        if not candidates:
            if len(clique) > len(best):
                best = list(clique)
            return
        if len(clique) + _colour_bound(candidates, nbrs) <= len(best):
            return
        while candidates:
            if len(clique) + _popcount(candidates) <= len(best):
                return
            v = _lowest(candidates)
            clique.append(v)
            expand(clique, candidates & nbrs[v])
            clique.pop()
            candidates &= ~(1 << v)

    if n:
        expand([], (1 << n) - 1)
    return best


def _greedy(seed: Sequence[int], nbrs: List[int], everyone: int) -> List[int]:
    clique = list(seed)
    candidates = everyone
    for v in clique:
        candidates &= nbrs[v]
    while candidates:
        pick, pick_degree = -1, -1
        for v in _members(candidates):
            degree = _popcount(nbrs[v] & candidates)
            if degree > pick_degree:
                pick, pick_degree = v, degree
        clique.append(pick)
        candidates &= nbrs[pick]
    return sorted(clique)


def max_clique_incremental(graph, previous_clique: Iterable[int] = (), restarts: int = 16) -> List[int]:
    """
    Heuristic clique after the newest node (the last index) was added.

    The previous clique is extended with the new node when it is adjacent to
    every member. Otherwise greedy restarts run from seeds ordered by degree
    (every vertex for small graphs, also every edge for very small ones, else
    the new node plus the ``restarts`` highest-degree vertices); each restart
    keeps adding the candidate with most neighbours among the remaining
    candidates. The result is always a clique and never smaller than the
    previous one.
    """
    nbrs = _bitsets(graph)
    n = len(nbrs)
    if n == 0:
        return []
    previous = sorted(v for v in set(previous_clique) if v < n)
    if not is_clique(graph, previous):
        logger.warning(f"previous clique {previous} is not a clique any more, restarting from scratch")
        previous = []
    new = n - 1
    if previous and new not in previous and all((nbrs[v] >> new) & 1 for v in previous):
        return sorted(previous + [new])

    everyone = (1 << n) - 1
    order = sorted(range(n), key=lambda v: (-_popcount(nbrs[v]), v))
    if n <= 48:
        seeds = [[v] for v in order]
        if n <= 24:
            seeds.extend([a, b] for a, b in combinations(order, 2) if (nbrs[a] >> b) & 1)
    else:
        seeds = [[new]] + [[v] for v in order[:restarts] if v != new]
    found = [previous, _greedy(previous, nbrs, everyone)] if previous else []
    found.extend(_greedy(seed, nbrs, everyone) for seed in seeds)
    return min(found, key=lambda c: (-len(c), c))
