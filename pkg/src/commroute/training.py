"""Training loops: interleaved collection + off-policy TD updates, and the
supervised shortest-path regression loop.

Off-policy routing training replays stored J-step windows: the carried
node state is seeded from the value recorded at the window start, the
node update is re-run through the window with current parameters, and the
squared TD error is averaged over every packet that actually acted.
Gradients for the node model, gate controller, and Q-network are clipped
as one group and stepped jointly.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .agent import DqnAgent, epsilon_schedule, select_action
from .config import ExperimentConfig
from .controller import IterationController, MatchedCommunication
from .env import RoutingEnv, agent_observation_size, node_observation_size
from .graphs import Geo2DGraph, generate_graph
from .nn import (
    ParamSet,
    Tensor,
    adamw_step,
    clip_grad_norm,
    concat,
    load_checkpoint,
    mul,
    no_grad,
    reshape,
    save_checkpoint,
    sub,
    take_nodes,
    tsum,
)
from .nodemodel import GraphBatch, NodeModel, NodeState
from .replay import EpisodeRecord, ReplayMemory, SequenceTransition
from .rng import RngBank

__all__ = ["RoutingModels", "train_batch", "td_targets", "RoutingTrainer", "train_spr"]


@dataclass
class RoutingModels:
    node_model: NodeModel
    agent: DqnAgent
    controller: Optional[IterationController]
    config: ExperimentConfig

    @classmethod
    def build(cls, cfg: ExperimentConfig, bank: RngBank) -> "RoutingModels":
        rng = bank.get("init")
        L, D, P = cfg.graph.nodes, cfg.graph.degree, cfg.env.n_packets
        node_model = NodeModel(
            obs_size=node_observation_size(L, D),
            rng=rng,
            encoder_dims=cfg.model.encoder_dims,
            hidden=cfg.model.hidden,
            aggregation=cfg.model.aggregation,
            comm_rounds=cfg.model.comm_rounds,
            leaky_slope=cfg.model.leaky_slope,
            gat_slope=cfg.model.gat_slope,
            gat_exclude_self=cfg.model.gat_exclude_self,
        )
        agent = DqnAgent(
            input_size=agent_observation_size(L, D, P) + node_model.psi_size(D),
            n_actions=D + 1,
            rng=rng,
            encoder_dims=cfg.model.encoder_dims,
            leaky_slope=cfg.model.leaky_slope,
        )
        controller = None
        if cfg.model.controller.enabled:
            controller = IterationController(
                hidden=cfg.model.hidden,
                rng=rng,
                heads=cfg.model.controller.heads,
                comm_bias=cfg.model.controller.comm_bias,
                noise_scale=cfg.model.controller.noise_scale,
            )
        return cls(node_model, agent, controller, cfg)

    def param_sets(self) -> list[ParamSet]:
        sets = [self.node_model.params, self.agent.behaviour]
        if self.controller is not None:
            sets.append(self.controller.params)
        return sets

    def save(self, path, meta: dict | None = None):
        groups = {
            "node": self.node_model.params,
            "behaviour": self.agent.behaviour,
            "target": self.agent.target,
        }
        if self.controller is not None:
            groups["controller"] = self.controller.params
        full_meta = {"config": self.config.to_dict()}
        full_meta.update(meta or {})
        save_checkpoint(path, groups, full_meta)

    @classmethod
    def load(cls, path, cfg: ExperimentConfig, bank: RngBank) -> "RoutingModels":
        groups, _ = load_checkpoint(path)
        models = cls.build(cfg, bank)
        models.node_model.params.load_arrays(groups["node"])
        models.agent.behaviour.load_arrays(groups["behaviour"])
        models.agent.target.load_arrays(groups["target"])
        if models.controller is not None:
            if "controller" not in groups:
                raise KeyError("checkpoint has no controller parameters")
            models.controller.params.load_arrays(groups["controller"])
        return models


# -- TD batch update --------------------------------------------------------


def td_targets(agent: DqnAgent, agent_obs_next: np.ndarray, psi_next: np.ndarray,
               cur_next: np.ndarray, rewards: np.ndarray, dones: np.ndarray,
               gamma: float) -> np.ndarray:
    """y = r + gamma * max_a Q_target(next) with the bootstrap zeroed when done."""
    B, P = rewards.shape
    psi_pk = psi_next[np.arange(B)[:, None], cur_next]
    x = np.concatenate([agent_obs_next, psi_pk], axis=-1).reshape(B * P, -1)
    q_next = agent.q_values(x, which="target").reshape(B, P, -1)
    return rewards + gamma * (1.0 - dones.astype(np.float64)) * q_next.max(axis=-1)


def train_batch(models: RoutingModels, memory: ReplayMemory, rng: np.random.Generator,
                noise_rng: Optional[np.random.Generator] = None) -> dict:
    """One gradient step over a sampled batch of stored windows."""
    cfg = models.config
    if len(memory) < cfg.train.batch:
        return {"skipped": True, "loss": float("nan")}
    windows = memory.sample(cfg.train.batch, rng)
    loss, stats = _sequence_td_loss(models, windows, noise_rng)
    loss.backward()
    sets = models.param_sets()
    pre_norm = (clip_grad_norm(sets, cfg.train.clip_norm)
                if cfg.train.clip_enabled else float("nan"))
    adamw_step(sets, lr=cfg.train.lr, wd=cfg.train.weight_decay)
    for ps in sets:
        ps.zero_grad()
    models.agent.soft_update_target(cfg.train.tau)
    stats.update({"skipped": False, "loss": float(loss.data), "grad_norm": pre_norm})
    return stats


def _sequence_td_loss(models: RoutingModels, windows: list[SequenceTransition],
                      noise_rng) -> tuple[Tensor, dict]:
    cfg = models.config
    J = cfg.train.seq_len
    B = len(windows)
    gb = GraphBatch.from_graphs([w.graph for w in windows])
    node_obs = np.stack([w.node_obs for w in windows])    # (B, J+1, L, No)
    agent_obs = np.stack([w.agent_obs for w in windows])  # (B, J+1, P, Na)
    active = np.stack([w.active for w in windows])        # (B, J+1, L)
    cur = np.stack([w.cur_nodes for w in windows])        # (B, J+1, P)
    actions = np.stack([w.actions for w in windows])      # (B, J, P)
    rewards = np.stack([w.rewards for w in windows])
    dones = np.stack([w.dones for w in windows])
    acted = np.stack([w.acted for w in windows])

    c0 = Tensor(np.stack([w.states[0] for w in windows]))
    state = NodeState(h=c0, c=c0)
    psis = []
    for j in range(J + 1):
        m = models.node_model.encode(Tensor(node_obs[:, j]))
        state, psi, _ = models.node_model.update(
            state, m, active[:, j], gb, comm=models.controller,
            rng=noise_rng, train=True,
        )
        psis.append(psi)

    P = agent_obs.shape[2]
    n_actions = models.agent.n_actions
    total = None
    q_abs_sum, q_abs_n = 0.0, 0
    for j in range(J):
        psi_pk = take_nodes(psis[j], cur[:, j])
        x = concat([Tensor(agent_obs[:, j]), psi_pk], axis=-1)
        q = models.agent.q_forward(reshape(x, (B * P, -1)))
        onehot = np.eye(n_actions)[actions[:, j].reshape(-1)]
        chosen = tsum(mul(q, onehot), axis=-1)
        y = td_targets(models.agent, agent_obs[:, j + 1], psis[j + 1].data,
                       cur[:, j + 1], rewards[:, j], dones[:, j], cfg.train.gamma)
        diff = sub(chosen, y.reshape(-1))
        sq = mul(mul(diff, diff), acted[:, j].reshape(-1).astype(np.float64))
        term = tsum(sq)
        total = term if total is None else total + term
        q_abs_sum += float(np.abs(q.data).max())
        q_abs_n += 1
    n_terms = max(1, int(acted.sum()))
    loss = mul(total, 1.0 / n_terms)
    return loss, {"td_terms": n_terms, "q_abs_max": q_abs_sum / max(1, q_abs_n)}


# -- interleaved data collection and training --------------------------------


class RoutingTrainer:
    """Drives episodes on fresh random graphs, storing windows and training
    every ``train_every`` environment steps after the warmup."""

    def __init__(self, models: RoutingModels, bank: RngBank,
                 log_path: Optional[Path] = None,
                 checkpoint_dir: Optional[Path] = None):
        self.models = models
        self.cfg = models.config
        self.bank = bank
        self.memory = ReplayMemory(self.cfg.train.replay_capacity,
                                   self.cfg.train.seq_len)
        self.global_step = 0
        self.log_path = Path(log_path) if log_path else None
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        w = self.cfg.train.log_window
        self._reward_ma = deque(maxlen=w)
        self._q_ma = deque(maxlen=w)
        self._msg_ma = deque(maxlen=w)
        self._last_loss = float("nan")
        self._log_rows: list[dict] = []
        self.step_rewards: list[float] = []

    def run(self, total_steps: Optional[int] = None, log_every: int = 10):
        cfg = self.cfg
        total = total_steps if total_steps is not None else cfg.train.total_steps
        while self.global_step < total:
            self._run_episode(total, log_every)
        if self.log_path:
            self._flush_log()
        if self.checkpoint_dir:
            self.models.save(self.checkpoint_dir / "checkpoint_final.npz",
                             {"step": self.global_step})

    def _run_episode(self, total: int, log_every: int):
        cfg = self.cfg
        graph = generate_graph(cfg.graph.nodes, cfg.graph.degree,
                               self.bank.get("graphgen"),
                               delay_scale=cfg.graph.delay_scale)
        env = RoutingEnv(graph, _env_config(cfg), self.bank.get("env"))
        gb = GraphBatch.from_graphs([graph])
        state = self.models.node_model.init_state(1, cfg.graph.nodes)
        record = EpisodeRecord(graph)
        record.states.append(state.c.data[0].copy())
        self._record_boundary(record, env)

        J = cfg.train.seq_len
        for t in range(cfg.env.train_horizon):
            eps = epsilon_schedule(
                self.global_step, warmup=cfg.exploration.warmup,
                initial=cfg.exploration.initial, decay=cfg.exploration.decay,
                every=cfg.exploration.every, floor=cfg.exploration.floor,
            )
            state, rewards = self._collect_step(env, gb, state, record, eps)
            if t + 1 >= J:
                self.memory.add_window(record, t + 1 - J)
            self.global_step += 1
            self.step_rewards.append(float(rewards.sum()))
            if (self.global_step > cfg.exploration.warmup
                    and self.global_step % cfg.train.train_every == 0
                    and len(self.memory) >= cfg.train.batch):
                stats = train_batch(self.models, self.memory,
                                    self.bank.get("batching"),
                                    self.bank.get("controller-noise"))
                if not stats["skipped"]:
                    self._last_loss = stats["loss"]
            if self.global_step % log_every == 0:
                self._log_row(eps)
            if (self.checkpoint_dir
                    and self.global_step % cfg.train.checkpoint_every == 0):
                self.models.save(
                    self.checkpoint_dir / f"checkpoint_{self.global_step}.npz",
                    {"step": self.global_step})
            if self.global_step >= total:
                break

    def _collect_step(self, env: RoutingEnv, gb: GraphBatch, state: NodeState,
                      record: EpisodeRecord, eps: float):
        cfg = self.cfg
        node_obs = record.node_obs[-1]
        agent_obs = record.agent_obs[-1]
        active = record.active[-1]
        cur = record.cur_nodes[-1]
        acted = env.acting_mask()
        with no_grad():
            m = self.models.node_model.encode(Tensor(node_obs[None]))
            state, psi, mlog = self.models.node_model.update(
                state, m, active[None], gb, comm=self.models.controller,
                rng=self.bank.get("controller-noise"), train=True,
            )
            q_in = np.concatenate([agent_obs, psi.data[0][cur]], axis=-1)
            q = self.models.agent.q_values(q_in)
        expl = self.bank.get("exploration")
        actions = np.zeros(cfg.env.n_packets, dtype=np.int64)
        q_seen = []
        for i in range(cfg.env.n_packets):
            if acted[i]:
                actions[i] = select_action(q[i], eps, expl)
                q_seen.append(q[i].max())
        rewards, dones, _ = env.step(actions)

        record.actions.append(actions)
        record.rewards.append(rewards)
        record.dones.append(dones)
        record.acted.append(acted)
        record.states.append(state.c.data[0].copy())
        self._record_boundary(record, env)
        self._reward_ma.append(float(rewards.sum()))
        self._q_ma.append(float(np.mean(q_seen)) if q_seen else 0.0)
        self._msg_ma.append(mlog.total / env.graph.n_nodes)
        return state.detached(), rewards

    def _record_boundary(self, record: EpisodeRecord, env: RoutingEnv):
        record.node_obs.append(env.node_observations())
        record.agent_obs.append(env.agent_observations())
        record.active.append(env.active_mask())
        record.cur_nodes.append(env.packet_nodes())

    def _log_row(self, eps: float):
        self._log_rows.append({
            "step": self.global_step,
            "loss": self._last_loss,
            "epsilon": eps,
            "reward_ma500": float(np.mean(self._reward_ma)) if self._reward_ma else 0.0,
            "q_ma500": float(np.mean(self._q_ma)) if self._q_ma else 0.0,
            "messages_ma500": float(np.mean(self._msg_ma)) if self._msg_ma else 0.0,
        })

    def _flush_log(self):
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=[
                "step", "loss", "epsilon", "reward_ma500", "q_ma500",
                "messages_ma500"])
            writer.writeheader()
            writer.writerows(self._log_rows)


def _env_config(cfg: ExperimentConfig):
    from .env import EnvConfig

    e = cfg.env
    return EnvConfig(
        n_packets=e.n_packets, failure_prob=e.failure_prob,
        failure_min=e.failure_min, failure_max=e.failure_max,
        max_inactive_frac=e.max_inactive_frac, bandwidth=e.bandwidth,
        reward_deliver=e.reward_deliver, reward_blocked=e.reward_blocked,
        reward_inactive=e.reward_inactive,
    )


# -- supervised shortest-path training ---------------------------------------


def train_spr(models: RoutingModels, readout, dataset, bank: RngBank,
              iters: Optional[int] = None,
              log_path: Optional[Path] = None) -> list[dict]:
    """Train the node model plus linear readout on shortest-path labels.

    Returns the validation curve: rows of {iteration, train_mse, val_mse},
    with validation at iteration 0 (before any update) and every
    ``spr.val_every`` iterations after.
    """
    cfg = models.config
    n_iters = iters if iters is not None else cfg.spr.iters
    rng = bank.get("batching")
    noise_rng = bank.get("controller-noise")
    curve: list[dict] = []
    sets = [models.node_model.params, readout.params]
    if models.controller is not None:
        sets.append(models.controller.params)

    train_loss = float("nan")
    for it in range(n_iters + 1):
        if it % cfg.spr.val_every == 0 or it == n_iters:
            val_mse = evaluate_spr_split(models, readout, dataset.val,
                                         cfg.spr.seq_len)
            curve.append({"iteration": it, "train_mse": train_loss,
                          "val_mse": val_mse})
        if it == n_iters:
            break
        idx = rng.integers(len(dataset.train), size=cfg.train.batch)
        samples = [dataset.train[i] for i in idx]
        loss = _spr_loss(models, readout, samples, cfg.spr.seq_len,
                         noise_rng, train=True)
        loss.backward()
        if cfg.train.clip_enabled:
            clip_grad_norm(sets, cfg.train.clip_norm)
        adamw_step(sets, lr=cfg.train.lr, wd=cfg.train.weight_decay)
        for ps in sets:
            ps.zero_grad()
        train_loss = float(loss.data)
    if log_path:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["iteration", "train_mse", "val_mse"])
            writer.writeheader()
            writer.writerows(curve)
    return curve


def _spr_loss(models: RoutingModels, readout, samples, seq_len: int,
              noise_rng=None, train: bool = False) -> Tensor:
    gb = GraphBatch.from_graphs([s.graph for s in samples])
    B, L, _ = gb.shape
    obs = np.stack([s.obs for s in samples])
    labels = np.stack([s.labels for s in samples])
    active = np.ones((B, L), dtype=bool)
    state = models.node_model.init_state(B, L)
    m = models.node_model.encode(Tensor(obs))
    psi = None
    for _ in range(seq_len):
        state, psi, _ = models.node_model.update(
            state, m, active, gb, comm=models.controller,
            rng=noise_rng, train=train,
        )
    pred = readout.forward(psi)
    from .nn import mse

    return mse(pred, Tensor(labels))


def evaluate_spr_split(models: RoutingModels, readout, samples,
                       seq_len: int, chunk: int = 250) -> float:
    """Mean squared error of the readout over a dataset split (no grad)."""
    total, count = 0.0, 0
    with no_grad():
        for lo in range(0, len(samples), chunk):
            part = samples[lo:lo + chunk]
            loss = _spr_loss(models, readout, part, seq_len)
            n = len(part)
            total += float(loss.data) * n
            count += n
    return total / max(1, count)
