"""Dynamic packet-routing environment.

A step resolves in three phases:

1. actions: packets sitting at nodes wait (action 0) or request a neighbor
   slot. Requests toward an inactive target are penalised and refused;
   requests for a busy directed edge (capacity one packet per direction)
   are refused and the lowest packet id wins a contended free edge.
2. transit: every packet on an edge, including ones that just entered,
   advances one step; packets reaching the far node arrive, and arriving
   at the destination pays the delivery reward and flags done.
3. dynamics: failures expire/spawn under the inactive-fraction cap, and
   delivered packets respawn with fresh endpoints for the next step.

Rewards: +10 delivery, -0.2 blocked (bandwidth), -0.2 routed to an
inactive node; only the first applicable penalty is charged. Packets on
a failed node are frozen (their actions are ignored) without penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graphs import Geo2DGraph

__all__ = [
    "Packet",
    "FailureState",
    "EnvConfig",
    "StepEvents",
    "RoutingEnv",
    "node_observation_size",
    "agent_observation_size",
]

NO_NODE = -1


@dataclass
class EnvConfig:
    n_packets: int = 20
    failure_prob: float = 0.2
    failure_min: int = 5
    failure_max: int = 10
    max_inactive_frac: float = 0.4
    bandwidth: int = 1
    reward_deliver: float = 10.0
    reward_blocked: float = -0.2
    reward_inactive: float = -0.2


@dataclass
class Packet:
    id: int
    size: float
    src: int
    dst: int
    current: int
    previous: int = NO_NODE
    on_edge: bool = False
    edge_target: int = NO_NODE
    remaining_time: int = 0
    visited: set = field(default_factory=set)
    spawn_step: int = 0
    hops_taken: int = 0


@dataclass
class FailureState:
    inactive: np.ndarray       # (L,) bool
    recover_at: np.ndarray     # (L,) step index, valid where inactive


@dataclass
class StepEvents:
    deliveries: list = field(default_factory=list)     # packet ids
    blocked: list = field(default_factory=list)        # packet ids
    inactive_routing: list = field(default_factory=list)
    looped: list = field(default_factory=list)
    frozen: list = field(default_factory=list)
    delays: list = field(default_factory=list)         # (packet id, src, dst, steps)


def node_observation_size(n_nodes: int, degree: int) -> int:
    return n_nodes + 2 + degree * (n_nodes + 2)


def agent_observation_size(n_nodes: int, degree: int, n_packets: int) -> int:
    return n_packets + 1 + 3 * n_nodes + 2 + degree * (n_nodes + 2)


class RoutingEnv:
    def __init__(self, graph: Geo2DGraph, config: EnvConfig,
                 rng: np.random.Generator, trace: bool = False):
        self.graph = graph
        self.config = config
        self.rng = rng
        self.trace_enabled = trace
        self.trace: list[dict] = []
        self.step_index = 0
        self.packets: list[Packet] = []
        self.failures = FailureState(
            inactive=np.zeros(graph.n_nodes, dtype=bool),
            recover_at=np.zeros(graph.n_nodes, dtype=np.int64),
        )
        # in-transit occupancy per directed edge (u, v) -> packet id
        self.edge_busy: dict[tuple[int, int], int] = {}
        self.total_deliveries = 0
        self.reset()

    # -- lifecycle ---------------------------------------------------------

    def reset(self):
        self.step_index = 0
        self.trace.clear()
        self.edge_busy.clear()
        self.total_deliveries = 0
        self.failures.inactive[:] = False
        self.packets = [self._spawn_packet(i, step=0) for i in range(self.config.n_packets)]
        return self

    def _spawn_packet(self, pid: int, step: int) -> Packet:
        active = np.flatnonzero(~self.failures.inactive)
        src = int(active[self.rng.integers(len(active))])
        dst = int(self.rng.integers(self.graph.n_nodes - 1))
        if dst >= src:
            dst += 1
        return Packet(
            id=pid,
            size=float(self.rng.uniform(0.0, 1.0)),
            src=src,
            dst=dst,
            current=src,
            visited={src},
            spawn_step=step,
        )

    # -- observations -------------------------------------------------------

    def _edge_load(self) -> np.ndarray:
        load = np.zeros((self.graph.n_nodes, self.graph.n_nodes))
        for p in self.packets:
            if p.on_edge:
                load[p.current, p.edge_target] += p.size
                load[p.edge_target, p.current] += p.size
        return load

    def node_observations(self) -> np.ndarray:
        """(L, L + 2 + D*(L+2)): id one-hot | packet count | total load | slots."""
        g = self.graph
        L, D = g.n_nodes, g.degree
        obs = np.zeros((L, node_observation_size(L, D)))
        counts = np.zeros(L)
        loads = np.zeros(L)
        for p in self.packets:
            if not p.on_edge:
                counts[p.current] += 1
                loads[p.current] += p.size
        edge_load = self._edge_load()
        obs[np.arange(L), np.arange(L)] = 1.0
        obs[:, L] = counts
        obs[:, L + 1] = loads
        base = L + 2
        for d in range(D):
            nbr = g.neighbors[:, d]
            obs[np.arange(L), base + nbr] = 1.0
            obs[:, base + L] = g.slot_delay[:, d]
            obs[:, base + L + 1] = edge_load[np.arange(L), nbr]
            base += L + 2
        return obs

    def agent_observations(self) -> np.ndarray:
        """(P, ...): packet one-hot | size | dst | current | previous | on-edge |
        remaining time | current node's neighbor slots."""
        g = self.graph
        L, D, P = g.n_nodes, g.degree, self.config.n_packets
        obs = np.zeros((P, agent_observation_size(L, D, P)))
        edge_load = self._edge_load()
        for p in self.packets:
            row = obs[p.id]
            row[p.id] = 1.0
            o = P
            row[o] = p.size
            o += 1
            row[o + p.dst] = 1.0
            o += L
            row[o + p.current] = 1.0
            o += L
            if p.previous != NO_NODE:
                row[o + p.previous] = 1.0
            o += L
            row[o] = 1.0 if p.on_edge else 0.0
            row[o + 1] = p.remaining_time
            o += 2
            for d in range(D):
                u = g.neighbors[p.current, d]
                row[o + u] = 1.0
                row[o + L] = g.slot_delay[p.current, d]
                row[o + L + 1] = edge_load[p.current, u]
                o += L + 2
        return obs

    def active_mask(self) -> np.ndarray:
        return ~self.failures.inactive.copy()

    def acting_mask(self) -> np.ndarray:
        """Packets that take a real action this step (at a node)."""
        return np.array([not p.on_edge for p in self.packets])

    def packet_nodes(self) -> np.ndarray:
        return np.array([p.current for p in self.packets], dtype=np.int64)

    # -- dynamics -----------------------------------------------------------

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, StepEvents]:
        """Apply per-packet actions; returns (rewards, done flags, events)."""
        g, cfg = self.graph, self.config
        P = cfg.n_packets
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (P,):
            raise ValueError(f"expected {P} actions, got shape {actions.shape}")
        if np.any(actions < 0) or np.any(actions > g.degree):
            bad = int(np.flatnonzero((actions < 0) | (actions > g.degree))[0])
            raise ValueError(
                f"action {actions[bad]} for packet {bad} outside [0, {g.degree}]"
            )
        rewards = np.zeros(P)
        dones = np.zeros(P, dtype=bool)
        events = StepEvents()

        # phase 1: route requests from packets at nodes, in packet-id order
        entered: dict[tuple[int, int], int] = {}
        for p in self.packets:
            a = int(actions[p.id])
            if p.on_edge:
                continue
            if self.failures.inactive[p.current]:
                events.frozen.append(p.id)
                self._trace(p.id, a, "frozen", 0.0)
                continue
            if a == 0:
                self._trace(p.id, a, "wait", 0.0)
                continue
            target = int(g.neighbors[p.current, a - 1])
            if self.failures.inactive[target]:
                rewards[p.id] += cfg.reward_inactive
                events.inactive_routing.append(p.id)
                self._trace(p.id, a, "inactive", cfg.reward_inactive)
                continue
            key = (p.current, target)
            if key in self.edge_busy or key in entered:
                rewards[p.id] += cfg.reward_blocked
                events.blocked.append(p.id)
                self._trace(p.id, a, "blocked", cfg.reward_blocked)
                continue
            entered[key] = p.id
            p.on_edge = True
            p.edge_target = target
            p.remaining_time = int(g.delay[p.current, target])
            self._trace(p.id, a, "enter", 0.0)
        for key, pid in entered.items():
            self.edge_busy[key] = pid

        # phase 2: transit and arrivals
        respawn: list[int] = []
        for p in self.packets:
            if not p.on_edge:
                continue
            p.remaining_time -= 1
            if p.remaining_time > 0:
                continue
            del self.edge_busy[(p.current, p.edge_target)]
            p.previous = p.current
            p.current = p.edge_target
            p.edge_target = NO_NODE
            p.on_edge = False
            p.remaining_time = 0
            p.hops_taken += 1
            if p.current in p.visited:
                events.looped.append(p.id)
                self._trace(p.id, -1, "loop", 0.0)
            p.visited.add(p.current)
            if p.current == p.dst:
                rewards[p.id] += cfg.reward_deliver
                dones[p.id] = True
                events.deliveries.append(p.id)
                events.delays.append(
                    (p.id, p.src, p.dst, self.step_index - p.spawn_step + 1)
                )
                self.total_deliveries += 1
                respawn.append(p.id)
                self._trace(p.id, -1, "deliver", cfg.reward_deliver)
            else:
                self._trace(p.id, -1, "arrive", 0.0)

        # phase 3: failure dynamics, then respawns for the next step
        self.advance_failures()
        for pid in respawn:
            self.packets[pid] = self._spawn_packet(pid, step=self.step_index + 1)
        self.step_index += 1
        return rewards, dones, events

    def advance_failures(self):
        cfg, L = self.config, self.graph.n_nodes
        fs = self.failures
        recovering = fs.inactive & (fs.recover_at <= self.step_index + 1)
        fs.inactive[recovering] = False
        if cfg.failure_prob <= 0:
            return
        cap = int(np.floor(cfg.max_inactive_frac * L))
        for v in range(L):
            if fs.inactive[v]:
                continue
            if fs.inactive.sum() >= cap:
                break
            if self.rng.uniform() < cfg.failure_prob:
                duration = int(self.rng.integers(cfg.failure_min, cfg.failure_max + 1))
                fs.inactive[v] = True
                fs.recover_at[v] = self.step_index + 1 + duration
        # a failed node holds packets in place but never drops them

    def _trace(self, pid: int, action: int, event: str, reward: float):
        if self.trace_enabled:
            self.trace.append({
                "step": self.step_index,
                "packet": pid,
                "action": action,
                "event": event,
                "reward": reward,
            })
