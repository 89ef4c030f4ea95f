"""Reproducible random streams.

Every replicate gets its own counter-based generator keyed on
``(seed, stream...)`` so results do not depend on execution order or on how
replicates are split across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream id) pair that deterministically names a generator."""

    seed: int
    stream: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        return rng_stream(self.seed, *self.stream)

    def substream(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream + tuple(int(i) for i in ids))


def rng_stream(seed: int, *stream: int) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and the given stream ids.

    Identical arguments give bit-identical draw sequences; distinct stream
    ids give independent streams (SeedSequence spawn keys).
    """
    if seed < 0 or any(s < 0 for s in stream):
        raise ValueError("seed and stream ids must be non-negative integers")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))
