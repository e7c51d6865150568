"""Two-phase Louvain modularity optimisation on the undirected collapse of a graph.

Nodes are swept in ascending id order and ties prefer the current community,
then the lowest community index, so results are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .kg import KnowledgeGraph, largest_connected_component

MIN_GAIN = 1e-12  # minimum modularity increase for a single move
MIN_LEVEL_GAIN = 1e-9


@dataclass
class CommunityPartition:
    assignment: dict[int, int]
    communities: list[set[int]]
    modularity: float

    def to_json(self, names=None) -> str:
        f = (lambda e: names[e]) if names is not None else (lambda e: str(e))
        return json.dumps({"assignment": {f(e): c for e, c in sorted(self.assignment.items())},
                           "modularity": self.modularity}, sort_keys=True)


class _Graph:
    """Weighted undirected graph on ``0..n-1`` with explicit self-loop weights."""

    def __init__(self, n: int):
        self.n = n
        self.adj: list[dict[int, float]] = [{} for _ in range(n)]
        self.loops = np.zeros(n)

    def add(self, u: int, v: int, w: float = 1.0) -> None:
        if u == v:
            self.loops[u] += w
        else:
            self.adj[u][v] = self.adj[u].get(v, 0.0) + w
            self.adj[v][u] = self.adj[v].get(u, 0.0) + w

    def degrees(self) -> np.ndarray:
        return np.array([sum(a.values()) for a in self.adj]) + 2.0 * self.loops

    def total_weight(self) -> float:
        return sum(sum(a.values()) for a in self.adj) / 2.0 + float(self.loops.sum())


def modularity(n: int, edges: Iterable[tuple[int, int, float]], assignment: Iterable[int]) -> float:
    """Newman modularity of a partition of a weighted undirected multigraph."""
    g = _Graph(n)
    for u, v, w in edges:
        g.add(u, v, w)
    return _modularity(g, np.asarray(list(assignment)))


def _modularity(g: _Graph, comm: np.ndarray) -> float:
    m = g.total_weight()
    if m == 0:
        return 0.0
    k = g.degrees()
    inside = np.zeros(comm.max() + 1)
    np.add.at(inside, comm, g.loops)
    for u in range(g.n):
        for v, w in g.adj[u].items():
            if u < v and comm[u] == comm[v]:
                inside[comm[u]] += w
    tot = np.zeros(comm.max() + 1)
    np.add.at(tot, comm, k)
    return float((inside / m - (tot / (2 * m)) ** 2).sum())


def _move_nodes(g: _Graph) -> tuple[np.ndarray, bool]:
    m = g.total_weight()
    k = g.degrees()
    comm = np.arange(g.n)
    tot = k.copy()
    moved_any = False
    while True:
        moved = False
        for u in range(g.n):
            cu = comm[u]
            links: dict[int, float] = {}
            for v, w in g.adj[u].items():
                links[comm[v]] = links.get(comm[v], 0.0) + w
            tot[cu] -= k[u]
            # gain of joining c, up to a positive factor: links_c - tot_c * k_u / 2m
            best = cu
            best_gain = links.get(cu, 0.0) - tot[cu] * k[u] / (2 * m)
            for c in sorted(links):
                gain = links[c] - tot[c] * k[u] / (2 * m)
                if (gain - best_gain) / m > MIN_GAIN:
                    best, best_gain = c, gain
            tot[best] += k[u]
            if best != cu:
                comm[u] = best
                moved = moved_any = True
        if not moved:
            break
    # renumber by first appearance in node order
    _, first, inv = np.unique(comm, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv], moved_any


def _aggregate(g: _Graph, comm: np.ndarray) -> _Graph:
    h = _Graph(int(comm.max()) + 1)
    np.add.at(h.loops, comm, g.loops)
    for u in range(g.n):
        for v, w in g.adj[u].items():
            if u < v:
                h.add(int(comm[u]), int(comm[v]), w)
    return h


def louvain_local(n: int, edges: Iterable[tuple[int, int, float]]) -> tuple[np.ndarray, float]:
    """Louvain on a local-index graph; returns ``(community per node, modularity)``."""
    g0 = _Graph(n)
    for u, v, w in edges:
        g0.add(u, v, w)
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    flat = np.arange(n)
    if g0.total_weight() == 0:
        return flat, 0.0
    g = g0
    q = _modularity(g0, flat)
    while True:
        comm, moved = _move_nodes(g)
        if not moved:
            break
        new_flat = comm[flat]
        new_q = _modularity(g0, new_flat)
        flat = new_flat
        if new_q - q <= MIN_LEVEL_GAIN:
            q = new_q
            break
        q = new_q
        g = _aggregate(g, comm)
    # communities numbered by their smallest member
    _, first, inv = np.unique(flat, return_index=True, return_inverse=True)
    flat = np.argsort(np.argsort(first))[inv]
    return flat, _modularity(g0, flat)


def louvain(g: KnowledgeGraph, nodes: Iterable[int] | None = None) -> CommunityPartition:
    """Communities of ``g`` restricted to ``nodes`` (default: its largest connected component).

    Parallel triples between a pair collapse into one edge weighted by multiplicity.
    """
    nodes = sorted(largest_connected_component(g) if nodes is None else set(nodes))
    if not nodes:
        raise ValueError("louvain needs a non-empty vertex set")
    local = {e: i for i, e in enumerate(nodes)}
    edges = [(local[h], local[t], 1.0) for h, _, t in g.triples.tolist() if h in local and t in local]
    comm, q = louvain_local(len(nodes), edges)
    assignment = {e: int(comm[i]) for i, e in enumerate(nodes)}
    communities: list[set[int]] = [set() for _ in range(int(comm.max()) + 1)]
    for e, c in assignment.items():
        communities[c].add(e)
    return CommunityPartition(assignment, communities, q)
