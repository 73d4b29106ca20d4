"""Recurrent node model: encoder, dual GRU, K rounds of neighbor exchange.

Every environment step each node encodes its observation, runs the first
GRU over the persistent carried state to get a fresh hidden state, then
exchanges hidden states with neighbors for K synchronous rounds. Received
states are combined by a pluggable aggregation (sum / mean / GCN / GAT)
and folded in by the second GRU, which shares the carried state. The two
cells share one carried vector: the hidden state is rebuilt every step
while the carried state persists across steps.

The per-node output is the concatenation of the node's final hidden state
with the last state received from each neighbor slot (zeros for slots
that never received, including slots of failed neighbors).

All shapes are batched: (B, L, ...) over B graphs of L nodes each.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graphs import Geo2DGraph
from .nn import (
    DimensionError,
    GruCell,
    Mlp,
    ParamSet,
    Tensor,
    concat,
    leaky_relu,
    matmul,
    mul,
    reshape,
    slice_last,
    softmax,
    swap_last_axes,
    take_nodes,
    take_nodes_regular,
    take_pairs,
    tsum,
    xavier_init,
)

__all__ = [
    "AGGREGATIONS",
    "NodeState",
    "GraphBatch",
    "MessageLog",
    "NodeModel",
    "aggregate_sum",
    "aggregate_mean",
    "gcn_aggregate",
    "gat_aggregate",
]

AGGREGATIONS = ("sum", "mean", "gcn", "gat")


@dataclass
class NodeState:
    """Per-node recurrent state: h rebuilt each step, c carried across steps."""

    h: Tensor                      # (B, L, H)
    c: Tensor                      # (B, L, H)
    received: Optional[Tensor] = None  # (B, L, D, H) last state per neighbor slot

    def detached(self) -> "NodeState":
        return NodeState(self.h.detach(), self.c.detach(),
                         self.received.detach() if self.received is not None else None)


@dataclass
class GraphBatch:
    """Graph arrays the node model consumes, stacked over the batch."""

    neighbors: np.ndarray        # (B, L, D) node id per slot, ascending
    reciprocal_slot: np.ndarray  # (B, L, D) slot of v inside neighbor's table
    adjacency: np.ndarray        # (B, L, L)
    incoming_slots: np.ndarray   # (B, L, D) flat slot positions reading each node

    @classmethod
    def from_graphs(cls, graphs: Sequence[Geo2DGraph]) -> "GraphBatch":
        return cls(
            neighbors=np.stack([g.neighbors for g in graphs]),
            reciprocal_slot=np.stack([g.reciprocal_slot for g in graphs]),
            adjacency=np.stack([g.adjacency for g in graphs]),
            incoming_slots=np.stack([g.incoming_slots for g in graphs]),
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.neighbors.shape


@dataclass
class MessageLog:
    """Transmission counts; per_round[k][b, v] = messages sent by node v."""

    per_round: list = field(default_factory=list)

    def log_round(self, sent: np.ndarray):
        self.per_round.append(sent)

    @property
    def total(self) -> int:
        return int(sum(r.sum() for r in self.per_round))

    def per_node(self) -> np.ndarray:
        """(B, L) total messages sent per node over all rounds this step."""
        return np.sum(self.per_round, axis=0)

    def round_totals(self) -> list[int]:
        return [int(r.sum()) for r in self.per_round]


# -- standalone aggregation contracts --------------------------------------


def aggregate_sum(msgs: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise sum of received vectors; empty input gives zeros."""
    msgs = [np.asarray(m, dtype=np.float64) for m in msgs]
    if not msgs:
        return np.zeros(0)
    return np.sum(msgs, axis=0)


def aggregate_mean(msgs: Sequence[np.ndarray]) -> np.ndarray:
    msgs = [np.asarray(m, dtype=np.float64) for m in msgs]
    if not msgs:
        return np.zeros(0)
    return np.mean(msgs, axis=0)


def gcn_aggregate(H, A: np.ndarray, W, slope: float = 0.01) -> Tensor:
    """Symmetric-normalised graph convolution with zero-degree guard.

    Output rows for isolated nodes are exactly zero instead of dividing
    by a zero degree.
    """
    H = H if isinstance(H, Tensor) else Tensor(H)
    W = W if isinstance(W, Tensor) else Tensor(W)
    A = np.asarray(A, dtype=np.float64)
    deg = A.sum(axis=-1)
    inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    norm = A * inv_sqrt[..., :, None] * inv_sqrt[..., None, :]
    return leaky_relu(matmul(Tensor(norm), matmul(H, W)), slope=slope)


def gat_aggregate(H, A: np.ndarray, W, att, slope: float = 0.2,
                  exclude_self: bool = False) -> tuple[Tensor, Tensor]:
    """Single-head graph attention over each node's neighbors plus itself.

    Scores e_ij = leaky_relu(att . [W h_i || W h_j]) are normalised over
    j in N(i) u {i}; messages are the alpha-weighted sum of transformed
    states (including j = i unless ``exclude_self``). Returns (M, alpha).
    """
    H = H if isinstance(H, Tensor) else Tensor(H)
    W = W if isinstance(W, Tensor) else Tensor(W)
    att = att if isinstance(att, Tensor) else Tensor(att)
    A = np.asarray(A, dtype=np.float64)
    F = W.data.shape[1]
    if att.data.shape[-1] != 2 * F:
        raise DimensionError(f"attention vector must have width {2 * F}")
    proj = matmul(H, W)                                 # (..., L, F)
    a_src = reshape(slice_last(att, 0, F), (F, 1))
    a_dst = reshape(slice_last(att, F, 2 * F), (F, 1))
    s = matmul(proj, a_src)                             # (..., L, 1)
    t = matmul(proj, a_dst)
    logits = leaky_relu(s + swap_last_axes(t), slope=slope)  # (..., L, L)
    mask = A + np.eye(A.shape[-1])
    alpha = softmax(logits, axis=-1, mask=mask)
    weights = mul(alpha, mask - np.eye(A.shape[-1])) if exclude_self else alpha
    return matmul(weights, proj), alpha


# -- the node model ---------------------------------------------------------


class NodeModel:
    def __init__(self, obs_size: int, rng: np.random.Generator,
                 encoder_dims: Sequence[int] = (256, 128), hidden: int = 64,
                 aggregation: str = "sum", comm_rounds: int = 1,
                 leaky_slope: float = 0.01, gat_slope: float = 0.2,
                 gat_exclude_self: bool = False):
        if aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        self.obs_size = obs_size
        self.hidden = hidden
        self.aggregation = aggregation
        self.comm_rounds = comm_rounds
        self.leaky_slope = leaky_slope
        self.gat_slope = gat_slope
        self.gat_exclude_self = gat_exclude_self
        self.params = ParamSet()
        self.encoder = Mlp(self.params, "enc", [obs_size, *encoder_dims], rng,
                           slope=leaky_slope)
        enc_out = encoder_dims[-1]
        self.gru_a = GruCell(self.params, "gru_a", enc_out, hidden, rng)
        self.gru_b = GruCell(self.params, "gru_b", hidden, hidden, rng)
        if aggregation in ("gcn", "gat"):
            self.params.add("agg.weight", xavier_init((hidden, hidden), rng))
        if aggregation == "gat":
            self.params.add("agg.att", xavier_init((2 * hidden,), rng))
        self.last_attention: Optional[np.ndarray] = None

    # -- pieces -------------------------------------------------------------

    def encode(self, obs) -> Tensor:
        """Observation encoder; accepts (..., obs_size)."""
        obs = obs if isinstance(obs, Tensor) else Tensor(obs)
        lead = obs.data.shape[:-1]
        flat = reshape(obs, (-1, self.obs_size))
        return reshape(self.encoder(flat), (*lead, -1))

    def init_state(self, batch: int, n_nodes: int) -> NodeState:
        zeros = Tensor(np.zeros((batch, n_nodes, self.hidden)))
        return NodeState(h=zeros, c=zeros)

    def psi_size(self, degree: int) -> int:
        return self.hidden * (degree + 1)

    # -- one environment step -------------------------------------------------

    def update(self, state: NodeState, m: Tensor, active: np.ndarray,
               graphs: GraphBatch, comm=None, rng: Optional[np.random.Generator] = None,
               train: bool = False) -> tuple[NodeState, Tensor, MessageLog]:
        """Run RNN-A, K communication rounds, and assemble per-node outputs.

        ``m`` is the encoded observation (B, L, E); ``active`` (B, L) masks
        failed nodes out of every exchange; ``comm`` is an optional
        communication policy (iteration controller or a fixed-probability
        baseline) deciding which neighbors receive each round.
        """
        B, L, D = graphs.shape
        H = self.hidden
        if m.data.shape[:2] != (B, L):
            raise DimensionError(f"m has shape {m.data.shape}, expected ({B}, {L}, ...)")
        active = np.asarray(active, dtype=bool)
        flat = (B * L, -1)

        c = reshape(state.c, flat)
        h = self.gru_a(reshape(m, flat), c)
        c = h
        h3 = reshape(h, (B, L, H))

        received = Tensor(np.zeros((B, L, D, H)))
        log = MessageLog()
        nbr_flat = graphs.neighbors.reshape(B, L * D)
        bcol = np.arange(B)[:, None, None]
        # active state of the sender behind each receiver slot
        nbr_active = active[np.arange(B)[:, None], nbr_flat].reshape(B, L, D)
        static_deliver = nbr_active & active[:, :, None]
        static_sent = self._sent_counts(static_deliver, graphs)

        for k in range(self.comm_rounds):
            if comm is None:
                # masks are fixed within a step, so "last received" is just
                # the final round's message
                deliver, gate, sent = static_deliver, None, static_sent
            else:
                transmit, gate = comm.gates(h3, received, active, graphs,
                                            round_index=k, rng=rng, train=train)
                # receiver-side: slot d of node v delivers iff its sender
                # transmits on the reciprocal slot and both ends are active
                tr_recv = transmit[bcol, graphs.neighbors, graphs.reciprocal_slot]
                deliver = tr_recv & static_deliver
                sent = self._sent_counts(deliver, graphs)
            halting = comm is not None and comm.halts and not deliver.any()
            log.log_round(sent)
            if halting:
                for _ in range(k + 1, self.comm_rounds):
                    log.log_round(np.zeros((B, L)))
                break

            dmask = deliver[..., None].astype(np.float64)
            h_nb = reshape(take_nodes_regular(h3, nbr_flat, graphs.incoming_slots),
                           (B, L, D, H))
            if gate is not None:
                gate_recv = take_pairs(gate, graphs.neighbors, graphs.reciprocal_slot)
                scale = mul(reshape(gate_recv, (B, L, D, 1)), dmask)
                msg = mul(h_nb, scale)
                received = msg + mul(received, 1.0 - dmask)
            else:
                scale = Tensor(dmask)
                msg = mul(h_nb, scale)
                received = msg if comm is None else msg + mul(received, 1.0 - dmask)

            agg = self._aggregate(h3, msg, scale, deliver, active, graphs)
            h = self.gru_b(reshape(agg, flat), c)
            c = h
            h3 = reshape(h, (B, L, H))

        psi = concat([h3, reshape(received, (B, L, D * H))], axis=-1)
        new_state = NodeState(h=h3, c=reshape(c, (B, L, H)), received=received)
        return new_state, psi, log

    # -- aggregation inside a round -------------------------------------------

    def _aggregate(self, h3: Tensor, msg: Tensor, scale: Tensor,
                   deliver: np.ndarray, active: np.ndarray,
                   graphs: GraphBatch) -> Tensor:
        B, L, D = graphs.shape
        H = self.hidden
        kind = self.aggregation
        if kind == "sum":
            return tsum(msg, axis=2)
        if kind == "mean":
            counts = deliver.sum(axis=2).astype(np.float64)
            coef = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
            return mul(tsum(msg, axis=2), coef[:, :, None])
        W = self.params["agg.weight"]
        proj = matmul(h3, W)                                        # (B, L, H)
        nbr_flat = graphs.neighbors.reshape(B, L * D)
        proj_nb = reshape(take_nodes_regular(proj, nbr_flat, graphs.incoming_slots),
                          (B, L, D, H))
        if kind == "gcn":
            # structural symmetric normalisation over the active subgraph
            adj_active = (graphs.adjacency
                          * active[:, :, None] * active[:, None, :])
            deg = adj_active.sum(axis=-1)
            inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg),
                                 where=deg > 0)
            coef = (inv_sqrt[:, :, None]
                    * inv_sqrt[np.arange(B)[:, None], nbr_flat].reshape(B, L, D))
            weighted = mul(mul(proj_nb, scale), coef[..., None])
            return leaky_relu(tsum(weighted, axis=2), slope=self.leaky_slope)
        # gat: attention over self plus delivered neighbors
        att = self.params["agg.att"]
        a_src = reshape(slice_last(att, 0, H), (H, 1))
        a_dst = reshape(slice_last(att, H, 2 * H), (H, 1))
        s_self = matmul(proj, a_src)                                # (B, L, 1)
        t_self = matmul(proj, a_dst)
        t_nb = mul(matmul(proj_nb, a_dst), scale)                   # (B, L, D, 1)
        e_self = leaky_relu(s_self + t_self, slope=self.gat_slope)
        e_nb = leaky_relu(s_self + reshape(t_nb, (B, L, D)), slope=self.gat_slope)
        logits = concat([e_self, e_nb], axis=-1)                    # (B, L, D+1)
        mask = np.concatenate(
            [np.ones((B, L, 1)), deliver.astype(np.float64)], axis=-1
        )
        alpha = softmax(logits, axis=-1, mask=mask)
        self.last_attention = alpha.data
        val_nb = mul(proj_nb, scale)
        msgs = mul(reshape(slice_last(alpha, 1, D + 1), (B, L, D, 1)), val_nb)
        out = tsum(msgs, axis=2)
        if not self.gat_exclude_self:
            out = out + mul(slice_last(alpha, 0, 1), proj)
        return out
