"""Communication graphs and the spectral quantities of the gossip protocol.

At every tick of the universal clock one agent ``i`` is drawn uniformly out
of ``n`` and picks a neighbour ``j`` uniformly out of ``N_i``.  Edge
``{i, j}`` is therefore active with probability

    P({i, j}) = (1/n) * (1/|N_i| + 1/|N_j|)

and agent ``i`` takes part in a tick with probability

    p_i = (1/n) * (1 + sum_{j in N_i} 1/|N_j|).

The expected per-tick Laplacian ``L_bar = sum_e P(e) (e_i - e_j)(e_i - e_j)^T``
drives the contraction factor ``lambda = 1 - 2 beta (1 - beta) lambda_{n-1}(L_bar)``
used throughout :mod:`gossip_langevin.analysis`.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from gossip_langevin.errors import (
    ConnectivityError,
    InvalidParameterError,
    InvalidTopologyError,
    MalformedEdgeError,
)

__all__ = [
    "ActivationProfile",
    "Graph",
    "SpectralSummary",
    "activation_probabilities",
    "build_complete",
    "build_ring",
    "build_star",
    "edge_probabilities",
    "expected_laplacian",
    "from_edge_list",
    "lambda_contraction",
    "laplacian",
    "random_connected_graph",
    "read_edge_list",
    "write_edge_list",
]


@dataclass(frozen=True)
class Graph:
    """Immutable, connected, undirected graph without self-loops.

    Build instances with :func:`from_edge_list` (or one of the ``build_*``
    helpers); the constructor itself does no validation.
    """

    n: int
    neighbors: tuple[tuple[int, ...], ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    @cached_property
    def _neighbor_arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(np.asarray(nb, dtype=np.int64) for nb in self.neighbors)

    def __hash__(self) -> int:
        return hash((self.n, self.edges))


@dataclass(frozen=True)
class ActivationProfile:
    p: np.ndarray
    p_m: float


@dataclass(frozen=True)
class SpectralSummary:
    expected_laplacian: np.ndarray
    eigenvalues: np.ndarray
    lambda_n_minus_1: float


def from_edge_list(n: int, edges) -> Graph:
    """Validate ``edges`` on ``n`` nodes and return a :class:`Graph`.

    Raises:
        InvalidTopologyError: ``n`` is not a positive integer.
        MalformedEdgeError: out-of-range index, self-loop or duplicate edge.
        ConnectivityError: the graph has more than one component, or an
            isolated node.
    """
    if int(n) != n or n < 1:
        raise InvalidTopologyError(f"agent count must be a positive integer, got {n!r}")
    n = int(n)
    seen: set[tuple[int, int]] = set()
    adj: list[set[int]] = [set() for _ in range(n)]
    for edge in edges:
        if len(edge) != 2:
            raise MalformedEdgeError(f"edge {edge!r} is not a pair")
        i, j = (int(v) for v in edge)
        if not (0 <= i < n and 0 <= j < n):
            raise MalformedEdgeError(f"edge ({i}, {j}) has an index outside [0, {n})")
        if i == j:
            raise MalformedEdgeError(f"self-loop on node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise MalformedEdgeError(f"duplicate edge {key}")
        seen.add(key)
        adj[i].add(j)
        adj[j].add(i)

    if n > 1 and any(not nb for nb in adj):
        isolated = [i for i, nb in enumerate(adj) if not nb]
        raise ConnectivityError(f"nodes {isolated} have no neighbours; the graph must be connected")
    if n == 1:
        raise ConnectivityError("a single agent has no one to gossip with")

    # breadth-first search from node 0
    reached = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in reached:
                reached.add(v)
                queue.append(v)
    if len(reached) != n:
        raise ConnectivityError(
            f"graph is disconnected: node 0 reaches {len(reached)} of {n} nodes"
        )

    return Graph(
        n=n,
        neighbors=tuple(tuple(sorted(nb)) for nb in adj),
        edges=tuple(sorted(seen)),
    )


def build_ring(n: int) -> Graph:
    if n < 3:
        raise InvalidTopologyError(f"a ring needs at least 3 agents, got {n}")
    return from_edge_list(n, [(i, (i + 1) % n) for i in range(n)])


def build_complete(n: int) -> Graph:
    if n < 2:
        raise InvalidTopologyError(f"a complete graph needs at least 2 agents, got {n}")
    return from_edge_list(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def build_star(n: int, hub: int = 0) -> Graph:
    if n < 2:
        raise InvalidTopologyError(f"a star needs at least 2 agents, got {n}")
    return from_edge_list(n, [(hub, j) for j in range(n) if j != hub])


def random_connected_graph(n: int, edge_prob: float, rng: np.random.Generator) -> Graph:
    """Random spanning tree plus independent extra edges (always connected)."""
    order = rng.permutation(n)
    edges = {tuple(sorted((int(order[k]), int(order[rng.integers(k)])))) for k in range(1, n)}
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < edge_prob:
                edges.add((i, j))
    return from_edge_list(n, sorted(edges))


def laplacian(g: Graph) -> np.ndarray:
    a = g.adjacency()
    return np.diag(a.sum(axis=1)) - a


def edge_probabilities(g: Graph) -> np.ndarray:
    """Probability that each edge of ``g.edges`` is the active pair of a tick."""
    deg = g.degrees
    return np.array([(1.0 / deg[i] + 1.0 / deg[j]) / g.n for i, j in g.edges])


def activation_probabilities(g: Graph) -> ActivationProfile:
    deg = g.degrees.astype(float)
    p = np.array([(1.0 + np.sum(1.0 / deg[list(nb)])) / g.n for nb in g.neighbors])
    return ActivationProfile(p=p, p_m=float(p.min()))


def expected_laplacian(g: Graph) -> SpectralSummary:
    lbar = np.zeros((g.n, g.n))
    for (i, j), prob in zip(g.edges, edge_probabilities(g)):
        lbar[i, i] += prob
        lbar[j, j] += prob
        lbar[i, j] -= prob
        lbar[j, i] -= prob
    eig = np.linalg.eigvalsh(lbar)
    return SpectralSummary(expected_laplacian=lbar, eigenvalues=eig, lambda_n_minus_1=float(eig[1]))


def lambda_contraction(g: Graph, beta: float) -> float:
    """Mean-square contraction factor of one gossip fusion step on the
    disagreement subspace.  Lies in (0, 1) whenever the fusion-weight
    condition ``beta (1 - beta) < 1 / (2 lambda_{n-1})`` holds."""
    if not 0.0 < beta < 1.0:
        raise InvalidParameterError(f"beta must lie in (0, 1), got {beta}")
    lam2 = expected_laplacian(g).lambda_n_minus_1
    lam = 1.0 - 2.0 * beta * (1.0 - beta) * lam2
    if beta * (1.0 - beta) < 1.0 / (2.0 * lam2):
        assert 0.0 < lam < 1.0, lam
    return lam


def read_edge_list(path: str | os.PathLike) -> Graph:
    """Read the plain edge-list format: first line ``n``, then ``i j`` per line."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise InvalidTopologyError(f"{path}: empty edge-list file")
    try:
        n = int(lines[0])
        edges = []
        for lineno, ln in enumerate(lines[1:], start=2):
            parts = ln.split()
            if len(parts) != 2:
                raise MalformedEdgeError(f"{path}: line {lineno}: expected 'i j', got {ln!r}")
            edges.append((int(parts[0]), int(parts[1])))
    except ValueError as exc:
        if isinstance(exc, MalformedEdgeError):
            raise
        raise MalformedEdgeError(f"{path}: non-integer entry ({exc})") from exc
    return from_edge_list(n, edges)


def write_edge_list(g: Graph, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{g.n}\n")
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")
