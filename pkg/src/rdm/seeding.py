"""Named, reproducible random streams derived from a single integer seed.

All randomness uses numpy's PCG64 bit generator. A child stream is keyed by
``(seed, crc32(name))`` so adding a new stream never perturbs existing ones.
"""

import zlib

import numpy as np

GENERATOR = "numpy.PCG64"
STREAM_VERSION = 1


def stream(seed, name):
    """Return a fresh Generator for the named child stream of ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAM_VERSION, key))
    return np.random.Generator(np.random.PCG64(ss))
