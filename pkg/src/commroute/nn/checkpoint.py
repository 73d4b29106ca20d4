"""Parameter checkpointing: name -> shape -> values, bit-exact round-trip."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .modules import ParamSet

__all__ = ["save_checkpoint", "load_checkpoint"]

_META_KEY = "__meta_json__"


def save_checkpoint(path: Union[str, Path],
                    groups: Mapping[str, ParamSet],
                    meta: dict | None = None):
    """Write named parameter groups to one .npz container.

    Keys are ``{group}/{param}``; ``meta`` (JSON-serialisable) rides along for
    config echo. Arrays are stored as raw float64, so loads are bit-exact.
    """
    arrays: dict[str, np.ndarray] = {}
    for gname, ps in groups.items():
        for pname, t in ps.items():
            arrays[f"{gname}/{pname}"] = t.data
    arrays[_META_KEY] = np.frombuffer(
        json.dumps(meta or {}, sort_keys=True).encode(), dtype=np.uint8
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def load_checkpoint(path: Union[str, Path]) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    """Read a checkpoint back as {group: {param: array}} plus its meta dict."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    groups: dict[str, dict[str, np.ndarray]] = {}
    with np.load(path) as data:
        meta_raw = data[_META_KEY].tobytes().decode() if _META_KEY in data else "{}"
        for key in data.files:
            if key == _META_KEY:
                continue
            gname, pname = key.split("/", 1)
            groups.setdefault(gname, {})[pname] = data[key]
    return groups, json.loads(meta_raw)
