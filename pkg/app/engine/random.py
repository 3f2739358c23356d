# app/engine/random.py

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    """Independent PRNG streams. Adding a consumer never shifts another stream."""
    INIT = 0
    SHUFFLE = 1
    DROPOUT = 2
    SCENE = 3
    SPLIT = 4
    GRAD_CHECK = 5


def make_rng(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator for `(seed, stream, *keys)`.

    Each key tuple spawns its own sequence, so e.g. scene 17 of a corpus is the
    same whether it is generated alone, in order, or in parallel.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(int(stream), *keys))
    return np.random.Generator(np.random.Philox(sequence))
