"""Counter-based random streams.

Every stream is a Philox generator keyed by the master seed plus a tuple of
integers (fold, stage, class, ...), so a stream never depends on how many
numbers other streams drew or in which order work was scheduled.
"""
import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
