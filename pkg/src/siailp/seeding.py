"""Named random sub-streams derived from one integer seed.

Every consumer (mining per source entity, training, evaluation per query)
gets its own stream keyed by ``(seed, name, *ids)``, so results do not
depend on iteration order or worker count.
"""

import random
import zlib

import numpy as np


def _key(parts):
    out = []
    for p in parts:
        if isinstance(p, str):
            out.append(zlib.crc32(p.encode("utf-8")))
        else:
            out.append(int(p))
    return tuple(out)


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=_key(keys))


def py_rng(seed: int, *keys) -> random.Random:
    state = seed_sequence(seed, *keys).generate_state(2, dtype=np.uint64)
    return random.Random(int(state[0]) << 64 | int(state[1]))


def np_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(seed, *keys))
