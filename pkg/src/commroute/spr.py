"""Shortest-path regression: dataset construction and evaluation.

Each sample is one generated graph, the packet-free node observations it
produces (static through the rollout, which still exercises the temporal
message passing), and the matrix of shortest-path delays from every node
to every other node as regression targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graphs import Geo2DGraph, apsp, generate_graph
from .nn import Linear, ParamSet, Tensor
from .rng import RngBank

__all__ = [
    "SprSample",
    "SprDataset",
    "SprReadout",
    "static_node_observations",
    "build_dataset",
    "save_dataset",
    "load_dataset",
    "evaluate_spr",
]


@dataclass
class SprSample:
    graph: Geo2DGraph
    obs: np.ndarray      # (L, node_obs_size), packet-free observations
    labels: np.ndarray   # (L, L) shortest-path delays


@dataclass
class SprDataset:
    train: list
    val: list
    test: list

    def splits(self) -> dict[str, list]:
        return {"train": self.train, "val": self.val, "test": self.test}


class SprReadout:
    """Linear map from the per-node representation to L path-length outputs."""

    def __init__(self, psi_size: int, n_nodes: int, rng: np.random.Generator):
        self.params = ParamSet()
        self.linear = Linear(self.params, "readout", psi_size, n_nodes, rng)

    def forward(self, psi: Tensor) -> Tensor:
        return self.linear(psi)


def static_node_observations(graph: Geo2DGraph) -> np.ndarray:
    """Node observations of an idle network (no packets, no loads)."""
    from .env import node_observation_size

    L, D = graph.n_nodes, graph.degree
    obs = np.zeros((L, node_observation_size(L, D)))
    obs[np.arange(L), np.arange(L)] = 1.0
    base = L + 2
    for d in range(D):
        obs[np.arange(L), base + graph.neighbors[:, d]] = 1.0
        obs[:, base + L] = graph.slot_delay[:, d]
        base += L + 2
    return obs


def _make_sample(graph: Geo2DGraph) -> SprSample:
    return SprSample(
        graph=graph,
        obs=static_node_observations(graph),
        labels=apsp(graph, "delay"),
    )


def build_dataset(n_train: int, n_val: int, n_test: int, bank: RngBank,
                  nodes: int = 20, degree: int = 3,
                  delay_scale: float = 5.0) -> SprDataset:
    rng = bank.get("graphgen")
    counts = {"train": n_train, "val": n_val, "test": n_test}
    splits: dict[str, list] = {}
    for name, n in counts.items():
        splits[name] = [
            _make_sample(generate_graph(nodes, degree, rng, delay_scale=delay_scale))
            for _ in range(n)
        ]
    return SprDataset(**splits)


def save_dataset(dataset: SprDataset, path: str | Path):
    arrays: dict[str, np.ndarray] = {}
    for split, samples in dataset.splits().items():
        arrays[f"{split}/count"] = np.array(len(samples))
        for i, s in enumerate(samples):
            arrays[f"{split}/{i}/positions"] = s.graph.positions
            arrays[f"{split}/{i}/adjacency"] = s.graph.adjacency
            arrays[f"{split}/{i}/delay"] = s.graph.delay
            arrays[f"{split}/{i}/labels"] = s.labels
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, **arrays)


def load_dataset(path: str | Path) -> SprDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    splits: dict[str, list] = {"train": [], "val": [], "test": []}
    with np.load(path) as data:
        for split in splits:
            n = int(data[f"{split}/count"])
            for i in range(n):
                adjacency = data[f"{split}/{i}/adjacency"]
                graph = Geo2DGraph(
                    n_nodes=adjacency.shape[0],
                    degree=int(adjacency[0].sum()),
                    positions=data[f"{split}/{i}/positions"],
                    adjacency=adjacency,
                    delay=data[f"{split}/{i}/delay"],
                )
                sample = SprSample(
                    graph=graph,
                    obs=static_node_observations(graph),
                    labels=data[f"{split}/{i}/labels"],
                )
                splits[split].append(sample)
    return SprDataset(**splits)


def evaluate_spr(models, readout: SprReadout, samples: Sequence[SprSample],
                 seq_lens: Sequence[int], chunk: int = 250) -> dict[int, float]:
    """MSE per observation-window length: run that many steps, then predict."""
    from .training import evaluate_spr_split

    return {
        int(n): evaluate_spr_split(models, readout, list(samples), int(n), chunk)
        for n in seq_lens
    }
