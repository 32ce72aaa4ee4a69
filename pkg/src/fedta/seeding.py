"""Deterministic sub-seed derivation.

Every source of randomness in an experiment is derived from one master seed
through ``rng_for(master, domain, *indices)``.  The domain constants below
keep the streams disjoint; indices (round, client, ...) extend the path.
The derivation is ``numpy.random.SeedSequence([master, domain, *indices])``,
so runs are reproducible across processes and platforms.
"""

import numpy as np

DOMAIN_DATASET = 1
DOMAIN_TEST_DATASET = 2
DOMAIN_PARTITION = 3
DOMAIN_INIT = 4
DOMAIN_TRAIN = 5


def rng_for(master_seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream identified by (master_seed, *path)."""
    entropy = [int(master_seed)] + [int(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
