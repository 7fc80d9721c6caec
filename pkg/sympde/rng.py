"""Counter-based random streams keyed by (seed, run, purpose, step)."""

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    """Purposes that get independent random streams."""

    INIT = 0
    TRAIN = 1
    VALIDATION = 2
    EVALUATION = 3
    EXPLORATION = 4
    APPROX = 5
    POLICY = 6


def stream(seed: int, run: int, purpose: Stream, step: int = 0) -> np.random.Generator:
    """A Philox generator whose output depends only on the key, never on call order."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(run, int(purpose), step))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, run: int, purpose: Stream, step: int = 0) -> int:
    """An integer seed derived from the same key, for APIs that take one."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(run, int(purpose), step))
    return int(seq.generate_state(1, dtype=np.uint32)[0])
