"""Parameter registry and the layer primitives shared by all models."""

from __future__ import annotations

from typing import Iterable, Iterator, Sequence

import numpy as np

from scipy.special import expit

from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    custom_op,
    leaky_relu,
    linear,
    sigmoid,
    tanh,
)

__all__ = [
    "ParamSet",
    "xavier_init",
    "mlp_forward",
    "gru_cell_step",
    "Linear",
    "Mlp",
    "GruCell",
]


class ParamSet:
    """Named learnable tensors plus their paired AdamW moment buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._m[name], self._v[name]

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def copy_from(self, other: "ParamSet"):
        """Hard copy of parameter values (shapes must match)."""
        for name, t in self._params.items():
            src = other[name]
            if src.data.shape != t.data.shape:
                raise DimensionError(f"parameter {name!r} shape mismatch")
            t.data[...] = src.data

    def clone(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._params.items():
            out.add(name, t.data.copy())
        return out

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True):
        for name, t in self._params.items():
            if name not in arrays:
                if strict:
                    raise KeyError(f"checkpoint missing parameter {name!r}")
                continue
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise DimensionError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} != {t.data.shape}"
                )
            t.data[...] = arr


def xavier_init(shape: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Uniform Glorot initialisation with bound sqrt(6 / (fan_in + fan_out))."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


_ACTIVATIONS = {
    "leaky_relu": leaky_relu,
    "tanh": lambda x, slope=None: tanh(x),
    "sigmoid": lambda x, slope=None: sigmoid(x),
    "identity": lambda x, slope=None: x,
}


class Linear:
    def __init__(self, params: ParamSet, prefix: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        self.n_in, self.n_out = n_in, n_out
        self.weight = params.add(f"{prefix}.weight", xavier_init((n_in, n_out), rng))
        self.bias = params.add(f"{prefix}.bias", np.zeros(n_out))
        self._prefix = prefix

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.n_in:
            raise DimensionError(
                f"layer {self._prefix!r} expects input width {self.n_in}, "
                f"got {x.data.shape[-1]}"
            )
        return linear(x, self.weight, self.bias)


class Mlp:
    """Stack of linear layers; activation between layers, identity on output.

    ``final_activation=True`` activates the last layer too (used by the
    Q-network encoder so its features stay nonlinear before the value head).
    """

    def __init__(self, params: ParamSet, prefix: str, widths: Sequence[int],
                 rng: np.random.Generator, activation: str = "leaky_relu",
                 slope: float = 0.01, final_activation: bool = False):
        if len(widths) < 2:
            raise DimensionError("Mlp needs at least input and output widths")
        self.layers = [
            Linear(params, f"{prefix}.{i}", widths[i], widths[i + 1], rng)
            for i in range(len(widths) - 1)
        ]
        self.activation = activation
        self.slope = slope
        self.final_activation = final_activation

    def __call__(self, x: Tensor) -> Tensor:
        act = _ACTIVATIONS[self.activation]
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_activation:
                x = act(x, slope=self.slope) if self.activation == "leaky_relu" else act(x)
        return x


def mlp_forward(x: Tensor, layers: ParamSet, activation: str = "leaky_relu",
                slope: float = 0.01, final_activation: bool = False,
                prefix: str = "") -> Tensor:
    """Run an MLP given a ParamSet with ``{prefix}{i}.weight`` / ``.bias`` keys."""
    act = _ACTIVATIONS[activation]
    i = 0
    found = []
    while f"{prefix}{i}.weight" in layers:
        found.append(i)
        i += 1
    if not found:
        raise DimensionError(f"no layers with prefix {prefix!r} in ParamSet")
    for i in found:
        w, b = layers[f"{prefix}{i}.weight"], layers[f"{prefix}{i}.bias"]
        if x.data.shape[-1] != w.data.shape[0]:
            raise DimensionError(
                f"layer {prefix}{i} expects input width {w.data.shape[0]}, "
                f"got {x.data.shape[-1]}"
            )
        x = linear(x, w, b)
        if i < found[-1] or final_activation:
            x = act(x, slope=slope) if activation == "leaky_relu" else act(x)
    return x


class GruCell:
    """Gated recurrent unit with fused gate projections.

    Gate layout along the last axis of the fused weights: reset | update |
    candidate. The update-gate convention is h' = (1 - z) * n + z * h, so a
    saturated update gate (z -> 1) carries the previous state through.
    """

    def __init__(self, params: ParamSet, prefix: str, n_in: int, n_hidden: int,
                 rng: np.random.Generator):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.x_weight = params.add(f"{prefix}.x_weight", xavier_init((n_in, 3 * n_hidden), rng))
        self.h_weight = params.add(f"{prefix}.h_weight", xavier_init((n_hidden, 3 * n_hidden), rng))
        self.x_bias = params.add(f"{prefix}.x_bias", np.zeros(3 * n_hidden))
        self.h_bias = params.add(f"{prefix}.h_bias", np.zeros(3 * n_hidden))
        self._prefix = prefix

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        H = self.n_hidden
        if x.data.shape[-1] != self.n_in:
            raise DimensionError(
                f"gru {self._prefix!r} expects input width {self.n_in}, got {x.data.shape[-1]}"
            )
        if h.data.shape[-1] != H:
            raise DimensionError(
                f"gru {self._prefix!r} expects state width {H}, got {h.data.shape[-1]}"
            )
        if x.data.shape[:-1] != h.data.shape[:-1]:
            raise DimensionError(
                f"gru {self._prefix!r} batch shapes differ: {x.data.shape} vs {h.data.shape}"
            )
        if not (np.isfinite(x.data).all() and np.isfinite(h.data).all()):
            raise NumericError(f"gru {self._prefix!r} received non-finite input")
        wx, wh, bx, bh = self.x_weight, self.h_weight, self.x_bias, self.h_bias
        xd, hd = x.data, h.data
        gi = np.matmul(xd, wx.data) + bx.data
        gh = np.matmul(hd, wh.data) + bh.data
        r = expit(gi[..., :H] + gh[..., :H])
        z = expit(gi[..., H:2 * H] + gh[..., H:2 * H])
        gh_n = gh[..., 2 * H:]
        n = np.tanh(gi[..., 2 * H:] + r * gh_n)
        out_data = (1.0 - z) * n + z * hd

        def back(go):
            dn = go * (1.0 - z)
            dz = go * (hd - n)
            dt = dn * (1.0 - n * n)
            dpre_r = (dt * gh_n) * r * (1.0 - r)
            dpre_z = dz * z * (1.0 - z)
            dgi = np.concatenate([dpre_r, dpre_z, dt], axis=-1)
            dgh = np.concatenate([dpre_r, dpre_z, dt * r], axis=-1)
            dgi_f = dgi.reshape(-1, 3 * H)
            dgh_f = dgh.reshape(-1, 3 * H)
            if x.requires_grad:
                x._accumulate_owned(np.matmul(dgi, wx.data.T))
            if h.requires_grad:
                h._accumulate_owned(np.matmul(dgh, wh.data.T) + go * z)
            if wx.requires_grad:
                wx._accumulate_owned(
                    np.matmul(xd.reshape(-1, self.n_in).T, dgi_f))
            if wh.requires_grad:
                wh._accumulate_owned(np.matmul(hd.reshape(-1, H).T, dgh_f))
            if bx.requires_grad:
                bx._accumulate_owned(dgi_f.sum(axis=0))
            if bh.requires_grad:
                bh._accumulate_owned(dgh_f.sum(axis=0))

        return custom_op(out_data, (x, h, wx, wh, bx, bh), back)


def gru_cell_step(x: Tensor, h: Tensor, params: ParamSet, prefix: str = "gru") -> Tensor:
    """Functional GRU step over a ParamSet created by :class:`GruCell`."""
    cell = GruCell.__new__(GruCell)
    cell.x_weight = params[f"{prefix}.x_weight"]
    cell.h_weight = params[f"{prefix}.h_weight"]
    cell.x_bias = params[f"{prefix}.x_bias"]
    cell.h_bias = params[f"{prefix}.h_bias"]
    cell.n_in = cell.x_weight.data.shape[0]
    cell.n_hidden = cell.h_weight.data.shape[0]
    cell._prefix = prefix
    return cell(x, h)
