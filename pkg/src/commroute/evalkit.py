"""Routing evaluation over held-out graphs and seeds.

Policies share one interface: ``begin_episode(graph)`` then ``act(env)``
per step returning (actions, messages sent this step). Metrics stream
into accumulators per episode and aggregate as mean plus std across
seeds; delivered-packet statistics (delay, path-ratio) exclude packets
still in flight at the horizon, noted in the output metadata.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agent import select_action
from .env import EnvConfig, RoutingEnv, StepEvents
from .graphs import Geo2DGraph, apsp
from .nn import Tensor, no_grad
from .nodemodel import GraphBatch

__all__ = [
    "RoutingMetrics",
    "RandomPolicy",
    "GreedyModelPolicy",
    "OraclePolicy",
    "evaluate_policy",
    "count_looped",
    "compare_runs",
    "write_metrics_csv",
    "metrics_from_trace",
]

METRIC_FIELDS = ("reward", "throughput", "delay", "blocked", "looped",
                 "spr_ratio", "messages")


@dataclass
class RoutingMetrics:
    reward: float = 0.0       # mean total reward per episode
    throughput: float = 0.0   # deliveries per step
    delay: float = 0.0        # mean steps from spawn to delivery
    blocked: float = 0.0      # blocked events per step
    looped: float = 0.0       # revisit events per step
    spr_ratio: float = 0.0    # actual steps / shortest-path hops, delivered only
    messages: float = 0.0     # transmissions per node per step

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_FIELDS}


def count_looped(events: StepEvents) -> int:
    """Arrivals at a node the packet had already visited."""
    return len(events.looped)


# -- policies ----------------------------------------------------------------


class RandomPolicy:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def begin_episode(self, graph: Geo2DGraph):
        self._n_actions = graph.degree + 1

    def act(self, env: RoutingEnv) -> tuple[np.ndarray, int]:
        acting = env.acting_mask()
        actions = np.zeros(len(acting), dtype=np.int64)
        for i in np.flatnonzero(acting):
            actions[i] = self.rng.integers(self._n_actions)
        return actions, 0


class GreedyModelPolicy:
    """Greedy Q policy over the node model's representations (no exploration,
    controller noise off)."""

    def __init__(self, models):
        self.models = models
        self.state = None
        self.gb = None

    def begin_episode(self, graph: Geo2DGraph):
        self.gb = GraphBatch.from_graphs([graph])
        self.state = self.models.node_model.init_state(1, graph.n_nodes)

    def act(self, env: RoutingEnv) -> tuple[np.ndarray, int]:
        node_obs = env.node_observations()
        agent_obs = env.agent_observations()
        active = env.active_mask()
        cur = env.packet_nodes()
        acting = env.acting_mask()
        with no_grad():
            m = self.models.node_model.encode(Tensor(node_obs[None]))
            self.state, psi, mlog = self.models.node_model.update(
                self.state, m, active[None], self.gb,
                comm=self.models.controller, train=False,
            )
            q_in = np.concatenate([agent_obs, psi.data[0][cur]], axis=-1)
            q = self.models.agent.q_values(q_in)
        actions = np.zeros(len(acting), dtype=np.int64)
        for i in np.flatnonzero(acting):
            actions[i] = int(np.argmax(q[i]))
        return actions, mlog.total


class OraclePolicy:
    """Follows the minimum-delay next hop on the failure-free graph."""

    def begin_episode(self, graph: Geo2DGraph):
        self.graph = graph
        self.dist = apsp(graph, "delay")

    def act(self, env: RoutingEnv) -> tuple[np.ndarray, int]:
        g = self.graph
        acting = env.acting_mask()
        actions = np.zeros(len(acting), dtype=np.int64)
        for i, p in enumerate(env.packets):
            if not acting[i]:
                continue
            nbrs = g.neighbors[p.current]
            costs = [g.delay[p.current, u] + self.dist[u, p.dst] for u in nbrs]
            actions[i] = int(np.argmin(costs)) + 1
        return actions, 0


# -- evaluation ----------------------------------------------------------------


@dataclass
class _EpisodeAccumulator:
    reward: float = 0.0
    deliveries: int = 0
    blocked: int = 0
    looped: int = 0
    messages: int = 0
    delays: list = field(default_factory=list)
    ratios: list = field(default_factory=list)


def _run_episode(policy, graph: Geo2DGraph, env_cfg: EnvConfig, horizon: int,
                 rng: np.random.Generator, trace: bool = False):
    env = RoutingEnv(graph, env_cfg, rng, trace=trace)
    hops = apsp(graph, "hops")
    acc = _EpisodeAccumulator()
    policy.begin_episode(graph)
    for _ in range(horizon):
        actions, n_msgs = policy.act(env)
        rewards, _, events = env.step(actions)
        acc.reward += float(rewards.sum())
        acc.deliveries += len(events.deliveries)
        acc.blocked += len(events.blocked) + len(events.inactive_routing)
        acc.looped += count_looped(events)
        acc.messages += n_msgs
        for _, src, dst, steps in events.delays:
            acc.delays.append(steps)
            acc.ratios.append(steps / hops[src, dst])
    return acc, env.trace


def evaluate_policy(policy, graphs: Sequence[Geo2DGraph], seeds: Sequence[int],
                    env_cfg: EnvConfig, horizon: int = 300
                    ) -> tuple[list[dict], dict]:
    """Per-seed metric rows (means over graphs) plus an aggregate row.

    Deterministic given (policy parameters, graphs, seeds); the aggregate
    carries mean and std across seeds for every metric.
    """
    per_seed: list[dict] = []
    for seed in seeds:
        accs = []
        for gi, graph in enumerate(graphs):
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([int(seed), gi]))
            )
            acc, _ = _run_episode(policy, graph, env_cfg, horizon, rng)
            accs.append(acc)
        L = graphs[0].n_nodes
        n = horizon
        row = {
            "seed": int(seed),
            "reward": float(np.mean([a.reward for a in accs])),
            "throughput": float(np.mean([a.deliveries / n for a in accs])),
            "delay": float(np.mean([np.mean(a.delays) for a in accs if a.delays])
                           if any(a.delays for a in accs) else np.nan),
            "blocked": float(np.mean([a.blocked / n for a in accs])),
            "looped": float(np.mean([a.looped / n for a in accs])),
            "spr_ratio": float(np.mean([np.mean(a.ratios) for a in accs if a.ratios])
                               if any(a.ratios for a in accs) else np.nan),
            "messages": float(np.mean([a.messages / (n * L) for a in accs])),
        }
        per_seed.append(row)
    aggregate = {"seed": "aggregate"}
    for key in METRIC_FIELDS:
        vals = np.array([r[key] for r in per_seed], dtype=float)
        aggregate[key] = float(np.mean(vals))
        aggregate[f"{key}_std"] = float(np.std(vals))
    return per_seed, aggregate


def write_metrics_csv(rows: list[dict], aggregate: dict, path: str | Path,
                      header_comment: str = ""):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["seed", *METRIC_FIELDS]
    agg_fields = fields + [f"{k}_std" for k in METRIC_FIELDS]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.DictWriter(fh, fieldnames=agg_fields, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        writer.writerow(aggregate)


def metrics_from_trace(trace: list[dict], n_steps: int, n_nodes: int) -> dict:
    """Recount the countable metrics from a raw episode trace."""
    reward = sum(r["reward"] for r in trace)
    deliveries = sum(1 for r in trace if r["event"] == "deliver")
    blocked = sum(1 for r in trace if r["event"] in ("blocked", "inactive"))
    looped = sum(1 for r in trace if r["event"] == "loop")
    return {
        "reward": float(reward),
        "throughput": deliveries / n_steps,
        "blocked": blocked / n_steps,
        "looped": looped / n_steps,
    }


# -- run comparison -------------------------------------------------------------


def compare_runs(runs: dict[str, dict]) -> dict:
    """Pairwise percentage deltas with propagated standard deviations.

    ``runs`` maps run name to an aggregate metrics row (mean plus
    ``{metric}_std`` keys). Delta of b over a is 100 * (b - a) / |a| with
    std propagated as |b/a| * sqrt((sa/a)^2 + (sb/b)^2) * 100.
    """
    names = list(runs)
    out: dict = {"runs": names, "pairs": []}
    for i, a_name in enumerate(names):
        for b_name in names[i + 1:]:
            a, b = runs[a_name], runs[b_name]
            deltas = {}
            for key in METRIC_FIELDS:
                if key not in a or key not in b:
                    continue
                av, bv = float(a[key]), float(b[key])
                sa = float(a.get(f"{key}_std", 0.0))
                sb = float(b.get(f"{key}_std", 0.0))
                if av == 0.0:
                    deltas[key] = {"pct": float("nan"), "pct_std": float("nan")}
                    continue
                pct = 100.0 * (bv - av) / abs(av)
                if bv == 0.0:
                    pct_std = 100.0 * sb / abs(av)
                else:
                    pct_std = 100.0 * abs(bv / av) * np.sqrt(
                        (sa / av) ** 2 + (sb / bv) ** 2
                    )
                deltas[key] = {"pct": pct, "pct_std": float(pct_std)}
            out["pairs"].append({"base": a_name, "other": b_name, "deltas": deltas})
    return out


def write_comparison_json(comparison: dict, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(comparison, indent=2, sort_keys=True) + "\n")
