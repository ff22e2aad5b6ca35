"""Named, independent random streams derived from one master seed.

Each consumer (schedule, injected noise, initial state, data generation,
partitioning, ...) owns its own stream, keyed by a path such as
``("chain", 3, "noise")``.  Path components are hashed with CRC-32 into the
``spawn_key`` of a :class:`numpy.random.SeedSequence`, so adding a new
consumer or drawing more numbers from one stream never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np


def _component_key(component) -> int:
    if isinstance(component, (int, np.integer)) and component >= 0:
        return int(component)
    return zlib.crc32(str(component).encode("utf-8"))


def seed_sequence(master_seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=tuple(_component_key(c) for c in path)
    )


def stream(master_seed: int, *path) -> np.random.Generator:
    """Return a PCG64 generator for ``path`` under ``master_seed``.

    >>> a = stream(7, "chain", 0, "noise").standard_normal(3)
    >>> b = stream(7, "chain", 0, "noise").standard_normal(3)
    >>> bool((a == b).all())
    True
    """
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *path)))


def chain_stream(master_seed: int, chain: int, name: str) -> np.random.Generator:
    return stream(master_seed, "chain", chain, name)


def chain_seed_record(master_seed: int, chain: int) -> dict:
    """Entropy/spawn-key pairs for the manifest, one per per-chain stream."""
    out = {}
    for name in ("schedule", "noise", "init"):
        ss = seed_sequence(master_seed, "chain", chain, name)
        out[name] = {"entropy": ss.entropy, "spawn_key": list(ss.spawn_key)}
    return out
