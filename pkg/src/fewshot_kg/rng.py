"""Per-purpose seed streams.

Every random draw in the package comes from a generator keyed on
``(seed, purpose, *indices)``.  Nothing holds mutable RNG state across calls,
so resuming from a checkpoint only needs the step counter.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"stream keys must be non-negative, got {part}")
    return int(part)


def stream(seed: int, *parts: int | str) -> np.random.Generator:
    """Return a fresh generator for ``seed`` and the given purpose path."""
    return np.random.default_rng([_key(seed), *(_key(p) for p in parts)])
