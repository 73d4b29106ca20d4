"""Sequence replay memory.

Episodes are stored once as per-step arrays; a stored sample is a sliding
window of J consecutive steps (stride 1) referencing its episode, so
overlapping windows share storage. The memory holds windows in insertion
order with FIFO eviction and uniform sampling.

Each window carries the carried node state at every step boundary, which
lets training seed the recurrent replay from the state recorded at the
window start and lets tests verify the replayed reconstruction matches
the stored successors.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graphs import Geo2DGraph

__all__ = ["EpisodeRecord", "SequenceTransition", "ReplayMemory"]


@dataclass
class EpisodeRecord:
    """Growing per-episode arrays; boundary lists hold T+1 entries."""

    graph: Geo2DGraph
    node_obs: list = field(default_factory=list)    # (L, No) per boundary
    agent_obs: list = field(default_factory=list)   # (P, Na) per boundary
    active: list = field(default_factory=list)      # (L,) bool per boundary
    cur_nodes: list = field(default_factory=list)   # (P,) per boundary
    states: list = field(default_factory=list)      # (L, H) carried state per boundary
    actions: list = field(default_factory=list)     # (P,) per step
    rewards: list = field(default_factory=list)     # (P,) per step
    dones: list = field(default_factory=list)       # (P,) bool per step
    acted: list = field(default_factory=list)       # (P,) bool per step

    @property
    def n_steps(self) -> int:
        return len(self.actions)


@dataclass
class SequenceTransition:
    """A J-step window materialised as stacked arrays (J+1 boundaries)."""

    graph: Geo2DGraph
    node_obs: np.ndarray     # (J+1, L, No)
    agent_obs: np.ndarray    # (J+1, P, Na)
    active: np.ndarray       # (J+1, L)
    cur_nodes: np.ndarray    # (J+1, P)
    states: np.ndarray       # (J+1, L, H)
    actions: np.ndarray      # (J, P)
    rewards: np.ndarray      # (J, P)
    dones: np.ndarray        # (J, P)
    acted: np.ndarray        # (J, P)


def _materialize(record: EpisodeRecord, start: int, seq_len: int) -> SequenceTransition:
    hi = start + seq_len
    return SequenceTransition(
        graph=record.graph,
        node_obs=np.stack(record.node_obs[start:hi + 1]),
        agent_obs=np.stack(record.agent_obs[start:hi + 1]),
        active=np.stack(record.active[start:hi + 1]),
        cur_nodes=np.stack(record.cur_nodes[start:hi + 1]),
        states=np.stack(record.states[start:hi + 1]),
        actions=np.stack(record.actions[start:hi]),
        rewards=np.stack(record.rewards[start:hi]),
        dones=np.stack(record.dones[start:hi]),
        acted=np.stack(record.acted[start:hi]),
    )


class ReplayMemory:
    def __init__(self, capacity: int = 100_000, seq_len: int = 8):
        if capacity < 1 or seq_len < 1:
            raise ValueError("capacity and seq_len must be >= 1")
        self.capacity = capacity
        self.seq_len = seq_len
        self._windows: deque[tuple[EpisodeRecord, int]] = deque()

    def __len__(self) -> int:
        return len(self._windows)

    def add_episode(self, record: EpisodeRecord):
        """Register every complete window of a finished episode."""
        for start in range(0, record.n_steps - self.seq_len + 1):
            self.add_window(record, start)

    def add_window(self, record: EpisodeRecord, start: int):
        if start + self.seq_len > record.n_steps:
            raise ValueError("window extends past the recorded episode")
        self._windows.append((record, start))
        while len(self._windows) > self.capacity:
            self._windows.popleft()

    def sample(self, batch: int, rng: np.random.Generator) -> list[SequenceTransition]:
        if len(self._windows) == 0:
            raise ValueError("cannot sample from an empty memory")
        idx = rng.integers(len(self._windows), size=batch)
        return [
            _materialize(self._windows[i][0], self._windows[i][1], self.seq_len)
            for i in idx
        ]

    def window_at(self, i: int) -> SequenceTransition:
        record, start = self._windows[i]
        return _materialize(record, start, self.seq_len)
