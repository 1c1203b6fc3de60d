"""Seed derivation.

Every random draw in the package comes from a generator derived from one
master seed plus a component name and integer indices, so that adding a new
consumer never shifts the streams of existing ones.
"""

import zlib

import numpy as np


def derive_seed_sequence(seed, component, *index):
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(component.encode("utf-8"))]
    key.extend(int(i) & 0xFFFFFFFF for i in index)
    return np.random.SeedSequence(key)


def derive_rng(seed, component, *index):
    """Return a fresh ``numpy.random.Generator`` for ``(seed, component, *index)``."""
    return np.random.default_rng(derive_seed_sequence(seed, component, *index))


def derive_int(seed, component, *index):
    """A 31-bit integer seed, for APIs that only accept ints."""
    return int(derive_seed_sequence(seed, component, *index).generate_state(1)[0] >> 1)
