"""Interaction graphs, Laplacians, and the span{1} complement projector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import constants
from .numerics import sym_eig


@dataclass(frozen=True)
class Graph:
    """Undirected graph on nodes 0..n-1 with no self-loops."""

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"graph needs at least one node, got n={self.n}")
        norm = set()
        for e in self.edges:
            i, j = e
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge {e} out of range for n={self.n}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    def neighbors(self, i: int) -> set:
        out = set()
        for a, b in self.edges:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return out


def complete_graph(n: int) -> Graph:
    """Complete graph: every distinct pair connected."""
    return Graph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def path_graph(n: int) -> Graph:
    """Path 0-1-...-(n-1)."""
    return Graph(n, frozenset((i, i + 1) for i in range(n - 1)))


def adjacency(g: Graph) -> np.ndarray:
    a = np.zeros((g.n, g.n))
    for i, j in g.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def laplacian(g: Graph) -> np.ndarray:
    """Graph Laplacian: degree on the diagonal, -1 per edge off it."""
    a = adjacency(g)
    return np.diag(a.sum(axis=1)) - a


def is_connected(g: Graph) -> bool:
    """Connectivity test; spectral (lambda_2 > tol) and BFS must agree."""
    spectral = _spectrally_connected(g)
    search = _search_connected(g)
    if spectral != search:  # pragma: no cover - internal consistency guard
        raise AssertionError(
            f"spectral ({spectral}) and graph-search ({search}) connectivity disagree"
        )
    return search


def _spectrally_connected(g: Graph) -> bool:
    if g.n == 1:
        return True
    w, _ = sym_eig(laplacian(g))
    return bool(w[1] > constants.CONNECTIVITY_EIG_TOL)


def _search_connected(g: Graph) -> bool:
    seen = {0}
    stack = [0]
    adj = [[] for _ in range(g.n)]
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    while stack:
        for j in adj[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == g.n


def projection_complement_span1(n: int) -> np.ndarray:
    """Projector onto the orthogonal complement of span{1}: I - (1/n) 1 1^T."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return np.eye(n) - np.ones((n, n)) / n
