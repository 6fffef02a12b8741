"""Seed derivation.

Every random draw in a run comes from a ``numpy.random.Generator`` backed by
Philox (a counter-based bit generator) whose key is derived from the master
seed plus a tuple of integers naming the purpose, the round and the client.
Streams therefore never depend on the order in which work is scheduled.
"""

from __future__ import annotations

import numpy as np

# purpose tags; part of the reproducibility contract, do not renumber
INIT = 1
SPLIT = 2
PARTITION = 3
LOCAL_TRAIN = 4
UPLINK_NOISE = 5
DOWNLINK_NOISE = 6
SYNTH = 7


def generator(seed: int, *key: int) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Collapse ``(seed, *key)`` into a single 64-bit integer seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
