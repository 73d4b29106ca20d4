"""Named, independently seeded random streams.

Each run owns one bank keyed by the run seed. Streams are derived from
(seed, stream index) so toggling one consumer (say, controller noise)
never shifts the draws seen by another.
"""

from __future__ import annotations

import numpy as np

_STREAMS = (
    "graphgen",
    "env",
    "exploration",
    "controller-noise",
    "init",
    "batching",
    "eval",
)


class RngBank:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gens: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in _STREAMS:
            raise KeyError(f"unknown rng stream {name!r}; known: {_STREAMS}")
        if name not in self._gens:
            idx = _STREAMS.index(name)
            self._gens[name] = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([self.seed, idx]))
            )
        return self._gens[name]
