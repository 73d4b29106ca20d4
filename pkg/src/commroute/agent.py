"""Independent DQN agent: shared Q-network, target copy, exploration."""

from __future__ import annotations

import numpy as np

from .nn import Linear, Mlp, ParamSet, Tensor, no_grad

__all__ = ["QNetwork", "DqnAgent", "epsilon_schedule", "select_action"]


class QNetwork:
    """Encoder over (agent observation || node representation) plus a value head.

    The encoder keeps its activation on the final feature layer so the
    linear value head does not collapse into the last encoder layer.
    """

    def __init__(self, input_size: int, n_actions: int, rng: np.random.Generator,
                 encoder_dims=(256, 128), leaky_slope: float = 0.01):
        self.input_size = input_size
        self.n_actions = n_actions
        self.params = ParamSet()
        self.encoder = Mlp(self.params, "enc", [input_size, *encoder_dims], rng,
                           slope=leaky_slope, final_activation=True)
        self.head = Linear(self.params, "q", encoder_dims[-1], n_actions, rng)

    def forward(self, x, params: ParamSet | None = None) -> Tensor:
        """Q-values for {wait, neighbor slots}; optionally with swapped params."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if params is None:
            return self.head(self.encoder(x))
        # functional pass over another parameter set with the same names
        saved = [(layer, layer.weight, layer.bias) for layer in self.encoder.layers]
        saved.append((self.head, self.head.weight, self.head.bias))
        try:
            for layer in self.encoder.layers:
                layer.weight = params[f"{layer._prefix}.weight"]
                layer.bias = params[f"{layer._prefix}.bias"]
            self.head.weight = params["q.weight"]
            self.head.bias = params["q.bias"]
            return self.head(self.encoder(x))
        finally:
            for layer, w, b in saved:
                layer.weight = w
                layer.bias = b


class DqnAgent:
    """Behaviour and target networks with identical shapes."""

    def __init__(self, input_size: int, n_actions: int, rng: np.random.Generator,
                 encoder_dims=(256, 128), leaky_slope: float = 0.01):
        self.net = QNetwork(input_size, n_actions, rng, encoder_dims, leaky_slope)
        self.behaviour = self.net.params
        self.target = self.behaviour.clone()
        self.n_actions = n_actions

    def q_forward(self, x, which: str = "behaviour") -> Tensor:
        if which == "behaviour":
            return self.net.forward(x)
        if which == "target":
            return self.net.forward(x, params=self.target)
        raise ValueError(f"which must be 'behaviour' or 'target', got {which!r}")

    def q_values(self, x, which: str = "behaviour") -> np.ndarray:
        with no_grad():
            return self.q_forward(x, which).data

    def soft_update_target(self, tau: float):
        """target <- (1 - tau) * target + tau * behaviour, elementwise."""
        for name, t in self.target.items():
            t.data *= 1.0 - tau
            t.data += tau * self.behaviour[name].data

    def hard_sync(self):
        self.target.copy_from(self.behaviour)


def select_action(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over one Q row; greedy ties go to the lowest index."""
    if epsilon > 0 and rng.uniform() < epsilon:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


def epsilon_schedule(step: int, warmup: int = 100_000, initial: float = 1.0,
                     decay: float = 0.999, every: int = 100,
                     floor: float = 0.01) -> float:
    """Pure exploration through warmup, then stepwise geometric decay to the floor."""
    if step < warmup:
        return initial
    return max(floor, initial * decay ** ((step - warmup) // every))
