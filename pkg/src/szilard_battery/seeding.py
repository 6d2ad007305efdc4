"""Deterministic random streams.

Every stream is ``PCG64(SeedSequence(seed, spawn_key=key))`` where ``key`` is
a tuple of small integers naming the work unit (command, bath index, chunk).
Results therefore do not depend on how work units are scheduled.
"""
import zlib

import numpy as np

SCHEME = "numpy PCG64 <- SeedSequence(entropy=seed, spawn_key=(label_crc32, *indices))"


def _label(label):
    if isinstance(label, str):
        return zlib.crc32(label.encode())
    return int(label)


def float_key(x: float) -> int:
    """Exact integer key for a float parameter (its IEEE-754 bit pattern)."""
    return int(np.float64(x).view(np.uint64))


def stream(seed: int, *key) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_label(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
