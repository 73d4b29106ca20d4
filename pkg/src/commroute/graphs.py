"""Fixed-degree geometric graphs and the topology statistics used on them.

Generation places nodes uniformly in the unit square and greedily attaches
each node (in a random order) to its nearest candidate that still has
residual degree, rejecting layouts that cannot complete the degree
constraint or come out disconnected. Edge delays are Euclidean lengths
scaled and rounded to positive integers of environment steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

__all__ = [
    "Geo2DGraph",
    "GraphStats",
    "GenerationError",
    "generate_graph",
    "apsp",
    "betweenness",
    "graph_stats",
    "save_graph",
    "load_graph",
]

DEFAULT_DELAY_SCALE = 5.0


class GenerationError(RuntimeError):
    """Raised when no valid layout is found within the attempt budget."""


@dataclass
class Geo2DGraph:
    n_nodes: int
    degree: int
    positions: np.ndarray          # (L, 2) in the unit square
    adjacency: np.ndarray          # (L, L) symmetric 0/1, zero diagonal
    delay: np.ndarray              # (L, L) symmetric positive ints on edges
    neighbors: np.ndarray = field(init=False)   # (L, D) ascending node ids
    slot_delay: np.ndarray = field(init=False)  # (L, D) delay per slot
    reciprocal_slot: np.ndarray = field(init=False)  # (L, D) slot of v in nbr's table
    incoming_slots: np.ndarray = field(init=False)   # (L, D) flat slot positions reading v

    def __post_init__(self):
        L, D = self.n_nodes, self.degree
        self.neighbors = np.zeros((L, D), dtype=np.int64)
        self.slot_delay = np.zeros((L, D), dtype=np.int64)
        for v in range(L):
            nbrs = np.flatnonzero(self.adjacency[v])
            if len(nbrs) != D:
                raise ValueError(f"node {v} has degree {len(nbrs)}, expected {D}")
            self.neighbors[v] = nbrs
            self.slot_delay[v] = self.delay[v, nbrs]
        self.reciprocal_slot = np.zeros((L, D), dtype=np.int64)
        for v in range(L):
            for d, u in enumerate(self.neighbors[v]):
                self.reciprocal_slot[v, d] = int(np.flatnonzero(self.neighbors[u] == v)[0])
        # symmetry makes every node appear exactly D times in the flat table
        nbr_flat = self.neighbors.reshape(-1)
        order = np.argsort(nbr_flat, kind="stable")
        self.incoming_slots = order.reshape(L, D)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def edges(self) -> list[tuple[int, int, int]]:
        out = []
        for u in range(self.n_nodes):
            for v in range(u + 1, self.n_nodes):
                if self.adjacency[u, v]:
                    out.append((u, v, int(self.delay[u, v])))
        return out


@dataclass
class GraphStats:
    diameter_hops: int
    diameter_delay: int
    apsp_hops: np.ndarray
    apsp_delay: np.ndarray
    betweenness: np.ndarray


def _attach_fixed_degree(positions: np.ndarray, degree: int,
                         rng: np.random.Generator) -> np.ndarray | None:
    """Greedy nearest-neighbor attachment; None if the layout cannot finish."""
    L = len(positions)
    dist = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    adj = np.zeros((L, L), dtype=np.int64)
    residual = np.full(L, degree, dtype=np.int64)
    for v in rng.permutation(L):
        while residual[v] > 0:
            candidates = np.flatnonzero((residual > 0) & (adj[v] == 0))
            candidates = candidates[candidates != v]
            if len(candidates) == 0:
                return None
            # ties on distance break toward the lower node index
            u = candidates[np.lexsort((candidates, dist[v, candidates]))[0]]
            adj[v, u] = adj[u, v] = 1
            residual[v] -= 1
            residual[u] -= 1
    return adj


def _is_connected(adj: np.ndarray) -> bool:
    n, _ = connected_components(csr_matrix(adj), directed=False)
    return n == 1


def generate_graph(n_nodes: int, degree: int, rng: np.random.Generator,
                   delay_scale: float = DEFAULT_DELAY_SCALE,
                   max_attempts: int = 10_000) -> Geo2DGraph:
    if not (n_nodes > degree >= 1):
        raise ValueError(f"need n_nodes > degree >= 1, got L={n_nodes}, D={degree}")
    if (n_nodes * degree) % 2 != 0:
        raise ValueError(f"L*D must be even, got L={n_nodes}, D={degree}")
    for _ in range(max_attempts):
        positions = rng.uniform(0.0, 1.0, size=(n_nodes, 2))
        adj = _attach_fixed_degree(positions, degree, rng)
        if adj is None or not _is_connected(adj):
            continue
        dist = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
        delay = np.maximum(np.rint(dist * delay_scale), 1.0).astype(np.int64) * adj
        return Geo2DGraph(n_nodes, degree, positions, adj, delay)
    raise GenerationError(
        f"no valid graph with L={n_nodes}, D={degree} in {max_attempts} attempts"
    )


def apsp(g: Geo2DGraph, metric: str = "hops") -> np.ndarray:
    """Exact all-pairs shortest path lengths in hops or delay units."""
    if metric == "hops":
        weights = g.adjacency.astype(np.float64)
    elif metric == "delay":
        weights = g.delay.astype(np.float64)
    else:
        raise ValueError(f"metric must be 'hops' or 'delay', got {metric!r}")
    dist = dijkstra(csr_matrix(weights), directed=False, unweighted=(metric == "hops"))
    return dist


def betweenness(g: Geo2DGraph) -> np.ndarray:
    """Pair-normalised betweenness centrality (Brandes, unweighted)."""
    L = g.n_nodes
    scores = np.zeros(L)
    nbrs = [np.flatnonzero(g.adjacency[v]) for v in range(L)]
    for s in range(L):
        sigma = np.zeros(L)
        sigma[s] = 1.0
        dist = np.full(L, -1)
        dist[s] = 0
        order = [s]
        preds: list[list[int]] = [[] for _ in range(L)]
        head = 0
        while head < len(order):
            v = order[head]
            head += 1
            for w in nbrs[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    order.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(L)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                scores[w] += delta[w]
    # each unordered pair counted twice above; normalise by pairs excluding v
    pairs = (L - 1) * (L - 2)
    return scores / pairs if pairs > 0 else scores


def node_stats(g: Geo2DGraph) -> GraphStats:
    hops = apsp(g, "hops")
    delays = apsp(g, "delay")
    return GraphStats(
        diameter_hops=int(hops.max()),
        diameter_delay=int(delays.max()),
        apsp_hops=hops,
        apsp_delay=delays,
        betweenness=betweenness(g),
    )


def graph_stats(graphs: Iterable[Geo2DGraph]) -> dict[str, dict[str, float]]:
    """Min/max/mean/std per topology metric, pooled across the batch.

    Path-length metrics pool every matrix entry (self pairs included, as
    zero), matching how the summary is usually tabulated.
    """
    rows: dict[str, list[np.ndarray]] = {
        "order": [], "degree": [], "size": [],
        "diameter_hops": [], "diameter_delay": [],
        "apsp_hops": [], "apsp_delay": [], "betweenness": [],
    }
    for g in graphs:
        st = node_stats(g)
        rows["order"].append(np.array([g.n_nodes], dtype=float))
        rows["degree"].append(g.adjacency.sum(axis=1).astype(float))
        rows["size"].append(np.array([g.n_edges], dtype=float))
        rows["diameter_hops"].append(np.array([st.diameter_hops], dtype=float))
        rows["diameter_delay"].append(np.array([st.diameter_delay], dtype=float))
        rows["apsp_hops"].append(st.apsp_hops.reshape(-1))
        rows["apsp_delay"].append(st.apsp_delay.reshape(-1))
        rows["betweenness"].append(st.betweenness)
    out = {}
    for name, chunks in rows.items():
        pooled = np.concatenate(chunks)
        out[name] = {
            "min": float(pooled.min()),
            "max": float(pooled.max()),
            "mean": float(pooled.mean()),
            "std": float(pooled.std()),
        }
    return out


# -- portable text container ----------------------------------------------


def save_graph(g: Geo2DGraph, path: str | Path):
    doc = {
        "L": g.n_nodes,
        "D": g.degree,
        "positions": [[float(x), float(y)] for x, y in g.positions],
        "edges": [[int(u), int(v), int(w)] for u, v, w in g.edges()],
    }
    Path(path).write_text(json.dumps(doc, indent=None, separators=(",", ":"),
                                     sort_keys=False) + "\n")


def load_graph(path: str | Path) -> Geo2DGraph:
    doc = json.loads(Path(path).read_text())
    L, D = int(doc["L"]), int(doc["D"])
    positions = np.asarray(doc["positions"], dtype=np.float64)
    adj = np.zeros((L, L), dtype=np.int64)
    delay = np.zeros((L, L), dtype=np.int64)
    for u, v, w in doc["edges"]:
        adj[u, v] = adj[v, u] = 1
        delay[u, v] = delay[v, u] = w
    return Geo2DGraph(L, D, positions, adj, delay)
