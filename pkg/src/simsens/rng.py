"""Counter-based random streams keyed by purpose, index and sensitivity point.

Every random draw in a sweep comes from a Philox generator whose key is derived
from ``(seed, purpose, index, eta)``.  The mapping does not depend on the order
in which cells or replicates are evaluated, so serial and parallel runs, and
runs over a permuted grid, consume identical streams.
"""

import struct

import numpy as np

FIT = 0
SIMULATE = 1
PERMUTE = 2
REPLICATION = 3
MASK = 4


def _float_key(value):
    value = float(value)
    if value == 0.0:
        value = 0.0  # fold -0.0 into +0.0
    return struct.unpack("<Q", struct.pack("<d", value))[0]


def eta_key(eta):
    """Integer words identifying a sensitivity point by its exact float bits."""
    return tuple(_float_key(v) for v in np.atleast_1d(np.asarray(eta, dtype=float)))


def stream(seed, purpose, index=0, eta=()):
    """Return an independent ``numpy.random.Generator`` for one logical stream."""
    if int(seed) < 0:
        raise ValueError("seed must be non-negative")
    key = (int(purpose), int(index)) + eta_key(eta)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, purpose, index=0):
    """A 63-bit child seed, used to hand a whole sub-run its own master seed."""
    return int(stream(seed, purpose, index).integers(0, 2**63 - 1))
