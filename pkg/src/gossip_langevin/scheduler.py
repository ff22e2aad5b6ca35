"""Gossip event stream on the universal clock.

The local Poisson clocks are not simulated in continuous time; only the
order of their ticks matters, so each universal tick picks the clock owner
uniformly over all agents and the partner uniformly over the owner's
neighbours.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from gossip_langevin.topology import Graph


@dataclass(frozen=True)
class GossipEvent:
    k: int
    i: int
    j: int

    @property
    def pair(self) -> tuple[int, int]:
        return (self.i, self.j) if self.i < self.j else (self.j, self.i)

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "i": self.i, "j": self.j})


@dataclass
class ActivationCounters:
    tau: np.ndarray
    k: int = 0

    @classmethod
    def fresh(cls, n: int) -> "ActivationCounters":
        return cls(tau=np.zeros(n, dtype=np.int64))


def next_event(g: Graph, rng: np.random.Generator, k: int = 0) -> GossipEvent:
    i = int(rng.integers(g.n))
    nb = g.neighbors[i]
    j = nb[int(rng.integers(len(nb)))]
    return GossipEvent(k, i, j)


def record_event(counters: ActivationCounters, event: GossipEvent) -> ActivationCounters:
    counters.tau[event.i] += 1
    counters.tau[event.j] += 1
    counters.k += 1
    return counters


class GossipScheduler:
    """Buffered event source for one chain.

    Draws owners and partner choices in blocks for speed; the stream is a
    pure function of the generator state, so two schedulers built from the
    same seed emit identical events regardless of how they are consumed.
    """

    def __init__(self, g: Graph, rng: np.random.Generator, block: int = 8192):
        self.g = g
        self.rng = rng
        self.block = block
        self.k = 0
        self._deg = g.degrees
        self._nbr = [np.asarray(nb) for nb in g.neighbors]
        self._owners = np.empty(0, dtype=np.int64)
        self._u = np.empty(0)
        self._pos = 0

    def _refill(self):
        self._owners = self.rng.integers(self.g.n, size=self.block)
        self._u = self.rng.random(self.block)
        self._pos = 0

    def __iter__(self):
        return self

    def __next__(self) -> GossipEvent:
        if self._pos >= self._owners.size:
            self._refill()
        i = int(self._owners[self._pos])
        slot = int(self._u[self._pos] * self._deg[i])
        self._pos += 1
        ev = GossipEvent(self.k, i, int(self._nbr[i][slot]))
        self.k += 1
        return ev

    def take(self, count: int) -> list[GossipEvent]:
        return [next(self) for _ in range(count)]
