"""Seeded counter-based random streams.

Every consumer asks for a generator by (seed, label, index...). The label is
hashed with CRC32 so the same request yields the same Philox stream on any
platform, independent of call order.
"""

from __future__ import annotations

import zlib

import numpy as np

GENERATOR_NAME = "numpy.Philox"


def stream(seed: int, label: str, *index: int) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(label.encode("utf-8"))] + [int(i) for i in index]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
