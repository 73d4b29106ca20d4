"""Gradient clipping and the AdamW update."""

from __future__ import annotations

from typing import Iterable, Sequence, Union

import numpy as np

from .modules import ParamSet

__all__ = ["clip_grad_norm", "adamw_step"]

ParamSets = Union[ParamSet, Sequence[ParamSet]]


def _param_sets(params: ParamSets) -> list[ParamSet]:
    return [params] if isinstance(params, ParamSet) else list(params)


def clip_grad_norm(params: ParamSets, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Accepts one ParamSet or several (clipped as a single group). Returns the
    pre-clip norm; zero or missing gradients pass through unchanged.
    """
    sets = _param_sets(params)
    total = 0.0
    for ps in sets:
        for t in ps.tensors():
            if t.grad is not None:
                total += float(np.sum(t.grad * t.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for ps in sets:
            for t in ps.tensors():
                if t.grad is not None:
                    t.grad *= scale
    return norm


def adamw_step(params: ParamSets, lr: float, wd: float = 0.01,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One AdamW step (decoupled weight decay) over populated gradients."""
    for ps in _param_sets(params):
        ps.step_count += 1
        t = ps.step_count
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        for name, p in ps.items():
            if p.grad is None:
                continue
            m, v = ps.moments(name)
            m *= beta1
            m += (1.0 - beta1) * p.grad
            v *= beta2
            v += (1.0 - beta2) * (p.grad * p.grad)
            if wd:
                p.data -= lr * wd * p.data
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
