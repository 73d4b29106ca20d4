"""Per-round communication gating.

The iteration controller runs multi-head scaled dot-product attention over
a node's own hidden state and the states last received from its neighbor
slots, projects each row to a scalar, adds a constant communication bias
(plus Gaussian exploration noise in train mode), and squashes through a
sigmoid. Slots whose probability exceeds 0.5 get the node's updated state
next round; delivered states are scaled by the soft gate value so the
gradient of the routing loss reaches the gate parameters through the
messages it let through.

Two fixed baselines share the policy interface: transmit always, and
transmit with a set per-round probability.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .nn import (
    ParamSet,
    Tensor,
    concat,
    matmul,
    mul,
    reshape,
    sigmoid,
    slice_last,
    softmax,
    swap_last_axes,
    xavier_init,
)
from .nodemodel import GraphBatch

__all__ = [
    "IterationController",
    "MaxCommunication",
    "MatchedCommunication",
    "gate_decision",
    "matched_communication_gate",
]


def gate_decision(gate_probs: Tensor, mode: str = "eval") -> tuple[np.ndarray, Tensor]:
    """Hard transmit flags (prob strictly above 0.5) plus the soft gate values."""
    return gate_probs.data > 0.5, gate_probs


def matched_communication_gate(p: float, shape: tuple,
                               rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli(p) transmit decisions."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"communication probability must be in [0, 1], got {p}")
    return rng.uniform(size=shape) < p


class IterationController:
    """Attention-based gate over (self + D neighbor-slot) states."""

    halts = True

    def __init__(self, hidden: int, rng: np.random.Generator, heads: int = 4,
                 comm_bias: float = 0.5, noise_scale: float = 0.3):
        if hidden % heads != 0:
            raise ValueError(f"hidden size {hidden} not divisible by {heads} heads")
        if comm_bias < 0 or noise_scale < 0:
            raise ValueError("comm_bias and noise_scale must be non-negative")
        self.hidden = hidden
        self.heads = heads
        self.d_k = hidden // heads
        self.comm_bias = comm_bias
        self.noise_scale = noise_scale
        self.params = ParamSet()
        self.params.add("w_q", xavier_init((hidden, hidden), rng))
        self.params.add("w_k", xavier_init((hidden, hidden), rng))
        self.params.add("w_v", xavier_init((hidden, hidden), rng))
        self.params.add("w_fc", xavier_init((hidden, 1), rng))
        self.params.add("b_fc", np.zeros(1))

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None,
                train: bool = False) -> tuple[Tensor, Tensor]:
        """(N, M, H) rows -> per-row gate probabilities (N, M) and raw logits.

        Row 0 is the node's own state; its output is computed but ignored by
        the gating path.
        """
        N, M, H = x.data.shape
        q = matmul(x, self.params["w_q"])
        k = matmul(x, self.params["w_k"])
        v = matmul(x, self.params["w_v"])
        head_outs = []
        for i in range(self.heads):
            lo, hi = i * self.d_k, (i + 1) * self.d_k
            qi, ki, vi = (slice_last(t, lo, hi) for t in (q, k, v))
            scores = mul(matmul(qi, swap_last_axes(ki)), 1.0 / np.sqrt(self.d_k))
            head_outs.append(matmul(softmax(scores, axis=-1), vi))
        attn = concat(head_outs, axis=-1)                       # (N, M, H)
        z = matmul(attn, self.params["w_fc"]) + self.params["b_fc"] + self.comm_bias
        z = reshape(z, (N, M))
        if train and self.noise_scale > 0:
            if rng is None:
                raise ValueError("train-mode forward needs an rng for noise")
            z = z + rng.normal(0.0, self.noise_scale, size=(N, M))
        return sigmoid(z), z

    # -- communication-policy interface ------------------------------------

    def gates(self, h3: Tensor, received: Tensor, active: np.ndarray,
              graphs: GraphBatch, round_index: int,
              rng: Optional[np.random.Generator], train: bool
              ) -> tuple[np.ndarray, Tensor]:
        B, L, D = graphs.shape
        H = self.hidden
        x = concat([reshape(h3, (B, L, 1, H)), received], axis=2)
        probs, _ = self.forward(reshape(x, (B * L, D + 1, H)), rng=rng, train=train)
        slot_probs = reshape(slice_last(probs, 1, D + 1), (B, L, D))
        transmit, gate = gate_decision(slot_probs)
        return transmit, gate


class MaxCommunication:
    """Transmit to every neighbor in every round."""

    halts = False

    def gates(self, h3, received, active, graphs: GraphBatch, round_index: int,
              rng, train) -> tuple[np.ndarray, None]:
        return np.ones(graphs.shape, dtype=bool), None


class MatchedCommunication:
    """Transmit with a fixed probability per communication round."""

    halts = False

    def __init__(self, p_per_round: Sequence[float] | float):
        self.p_per_round = (
            [float(p_per_round)] if isinstance(p_per_round, (int, float, np.floating))
            else [float(p) for p in p_per_round]
        )
        for p in self.p_per_round:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"round probability {p} outside [0, 1]")

    def p_for_round(self, k: int) -> float:
        return self.p_per_round[min(k, len(self.p_per_round) - 1)]

    def gates(self, h3, received, active, graphs: GraphBatch, round_index: int,
              rng: np.random.Generator, train) -> tuple[np.ndarray, None]:
        p = self.p_for_round(round_index)
        if p >= 1.0:
            return np.ones(graphs.shape, dtype=bool), None
        return matched_communication_gate(p, graphs.shape, rng), None
