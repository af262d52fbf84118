"""Agent network topologies, graph shift operators and DGD mixing matrices."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from surf.errors import FormatError, ParameterError, StructuralError

MAX_ATTEMPTS = 1000

NORMALIZED_ADJACENCY = "normalized-adjacency"
STAR_ROW = "star-row"


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n-1``."""

    n: int
    edges: frozenset[tuple[int, int]]
    adjacency: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_edges(cls, n: int, edges) -> Graph:
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise StructuralError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise StructuralError(f"edge ({i}, {j}) out of range for n={n}")
            canon.add((min(i, j), max(i, j)))
        adj = np.zeros((n, n))
        for i, j in canon:
            adj[i, j] = adj[j, i] = 1.0
        adj.setflags(write=False)
        return cls(n=n, edges=frozenset(canon), adjacency=adj)

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def is_connected(self) -> bool:
        return len(reachable(self, 0)) == self.n

    def permute(self, perm: np.ndarray) -> Graph:
        """Relabel node ``perm[i]`` as ``i``."""
        inv = np.argsort(perm)
        return Graph.from_edges(self.n, [(inv[i], inv[j]) for i, j in self.edges])


def reachable(g: Graph, source: int) -> set[int]:
    seen = {source}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in g.neighbors(u):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def _from_nx(g: nx.Graph) -> Graph:
    return Graph.from_edges(g.number_of_nodes(), g.edges())


def make_regular(n: int, degree: int, seed: int) -> Graph:
    """Connected random ``degree``-regular graph on ``n`` nodes."""
    if degree < 0 or degree >= n or (n * degree) % 2:
        raise ParameterError(f"no {degree}-regular graph on {n} nodes")
    rand = random.Random(seed)
    for _ in range(MAX_ATTEMPTS):
        g = _from_nx(nx.random_regular_graph(degree, n, seed=rand))
        if g.is_connected():
            return g
    raise StructuralError(f"no connected {degree}-regular graph found in {MAX_ATTEMPTS} attempts")


def make_erdos_renyi(n: int, p: float, seed: int) -> Graph:
    """Connected G(n, p) graph, resampled until connected."""
    if not 0.0 < p <= 1.0:
        raise ParameterError(f"edge probability must lie in (0, 1], got {p}")
    if n < 1:
        raise ParameterError("n must be positive")
    rand = random.Random(seed)
    for _ in range(MAX_ATTEMPTS):
        g = _from_nx(nx.gnp_random_graph(n, p, seed=rand))
        if g.is_connected():
            return g
    raise StructuralError(f"no connected G({n}, {p}) sample in {MAX_ATTEMPTS} attempts")


def make_star(n: int) -> Graph:
    """Star on ``n`` nodes with node 0 as the center (server)."""
    if n < 2:
        raise ParameterError("a star needs at least 2 nodes")
    return Graph.from_edges(n, [(0, i) for i in range(1, n)])


def shift_operator(g: Graph, kind: str = NORMALIZED_ADJACENCY) -> np.ndarray:
    """Graph shift operator.

    ``normalized-adjacency`` gives ``D^-1/2 A D^-1/2``; ``star-row`` gives the
    row-normalized adjacency ``D^-1 A`` used by the server layer.
    """
    deg = g.degrees
    if np.any(deg == 0):
        raise StructuralError(f"isolated node(s): {np.flatnonzero(deg == 0).tolist()}")
    if kind == NORMALIZED_ADJACENCY:
        s = 1.0 / np.sqrt(deg)
        return g.adjacency * s[:, None] * s[None, :]
    if kind == STAR_ROW:
        return g.adjacency / deg[:, None]
    raise ParameterError(f"unknown shift operator kind {kind!r}")


def metropolis_weights(g: Graph) -> np.ndarray:
    """Metropolis-Hastings mixing matrix (symmetric, doubly stochastic)."""
    deg = g.degrees
    a = np.zeros((g.n, g.n))
    for i, j in g.edges:
        a[i, j] = a[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    a[np.diag_indices(g.n)] = 1.0 - a.sum(axis=1)
    return a


def write_edgelist(g: Graph, path) -> None:
    lines = [f"{g.n} {len(g.edges)}"] + [f"{i} {j}" for i, j in sorted(g.edges)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edgelist(path) -> Graph:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows:
        raise FormatError(f"{path}: empty edge list")
    try:
        n, m = (int(v) for v in rows[0])
        edges = [(int(a), int(b)) for a, b in rows[1:]]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if len(edges) != m:
        raise FormatError(f"{path}: header announces {m} edges, found {len(edges)}")
    return Graph.from_edges(n, edges)
