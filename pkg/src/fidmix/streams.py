"""Counter-based random streams.

Every random draw in fidmix comes from a stream identified by the run
seed plus a key such as ``(Purpose.PROPAGATE, particle, step, attempt)``.
Draws therefore do not depend on the order in which particles are
processed, or on how many threads process them.

"""

__all__ = ["Purpose", "RngStream"]

from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Purpose(int, Enum):
    PROPAGATE = 0
    RESAMPLE = 1
    ALTER = 2
    DATA = 3
    ORACLE = 4
    REPLICATE = 5
    ORDER = 6


@dataclass(frozen=True)
class RngStream:
    seed: int
    key: tuple[int, ...] = ()

    def __post_init__(self):
        if int(self.seed) < 0:
            raise ValueError(f"Seeds must be non-negative, got {self.seed}.")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "key", tuple(int(part) for part in self.key))

    def child(self, *key: int) -> "RngStream":
        """A stream keyed below this one."""
        return type(self)(self.seed, (*self.key, *key))

    def generator(self) -> np.random.Generator:
        """A fresh generator; identical streams yield identical draws."""
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(seq))


def as_stream(seed: "int | RngStream", key: Sequence[int] = ()) -> RngStream:
    if isinstance(seed, RngStream):
        return seed.child(*key)
    return RngStream(seed, tuple(key))
