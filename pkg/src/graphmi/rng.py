"""Seeded random streams.

A run owns a single integer seed. Every consumer of randomness pulls from a
named substream derived from that seed, so adding a new consumer never
perturbs the draws seen by existing ones. Substream states serialize to
plain dicts for exact checkpoint round-trips.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream of a run seed."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


class RunRng:
    """The run's random streams, keyed by consumer name.

    Streams are created lazily; their bit-generator states round-trip
    exactly through ``state``/``set_state``.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = substream(self.seed, name)
        return self._streams[name]

    def state(self) -> dict:
        return {
            "seed": self.seed,
            "streams": {
                name: gen.bit_generator.state for name, gen in self._streams.items()
            },
        }

    def set_state(self, state: dict) -> None:
        if int(state["seed"]) != self.seed:
            raise ValueError(
                f"rng state for seed {state['seed']} loaded into run with seed {self.seed}"
            )
        for name, bg_state in state["streams"].items():
            gen = self.get(name)
            gen.bit_generator.state = bg_state
