"""Seed handling.

Every random draw in the package goes through a PCG64 bit generator.  Child
seeds are derived from a base seed plus integer keys with ``SeedSequence``,
so one master seed reproduces a whole experiment.
"""

import numpy as np

GENERATOR_NAME = "numpy.PCG64"


def derive_seed(base, *keys):
    """Return a 64-bit seed derived from ``base`` and integer ``keys``."""
    entropy = [int(base) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def make_rng(seed, *keys):
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.Generator(np.random.PCG64(int(seed)))
