"""Named random streams derived from one integer seed.

Every consumer gets its own ``SeedSequence`` spawn key, so data generation,
initialization, shuffling and evaluation never share draws, and parallel
workers reproduce serial runs exactly.
"""
import numpy as np

DATA, INIT, SHUFFLE, EPT, SIGNAL = range(5)


def rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))
