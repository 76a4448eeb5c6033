"""Counter-based random streams.

Every random draw in the package goes through :func:`make_rng`, which builds a
Philox generator keyed by a tuple of non-negative integers. Keys are hashed by
``SeedSequence`` so that e.g. ``(scenario, seed, replication)`` triples map to
independent substreams regardless of the order in which they are consumed.
"""

import zlib

import numpy as np


def key_of(label):
    """Stable non-negative integer for a string label."""
    return zlib.crc32(str(label).encode("utf-8"))


def make_rng(*keys):
    ints = [k if isinstance(k, (int, np.integer)) else key_of(k) for k in keys]
    if any(int(k) < 0 for k in ints):
        raise ValueError("rng keys must be non-negative")
    ss = np.random.SeedSequence([int(k) for k in ints])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(*keys):
    """Derive a 63-bit integer seed from a key tuple."""
    return int(make_rng(*keys).integers(0, 2**63 - 1))
