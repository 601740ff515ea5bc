"""Counter-based deterministic random streams.

Every random draw in the engine comes from a Philox generator whose
128-bit key is derived from the tuple (seed, stage, iteration,
patch_index, purpose). Distinct tuples give statistically independent
streams, replaying a tuple reproduces its draws exactly, and no global
RNG state exists anywhere. This is what makes patch-parallel execution
bit-reproducible for any worker count.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .errors import InvalidParameter

_U64 = 1 << 64


def stream_key(seed: int, stage: int = 0, iteration: int = 0,
               patch_index: int = 0, purpose: str = "") -> int:
    """Derive the 128-bit Philox key for a (seed, …, purpose) tuple."""
    if not 0 <= seed < _U64:
        raise InvalidParameter(f"seed must be an unsigned 64-bit integer, got {seed}")
    if stage < 0 or iteration < 0 or patch_index < 0:
        raise InvalidParameter("stage, iteration and patch_index must be non-negative")
    packed = struct.pack(">QQQQ", seed, stage, iteration, patch_index)
    digest = hashlib.sha256(packed + purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "big")


def rng_stream(seed: int, stage: int = 0, iteration: int = 0,
               patch_index: int = 0, purpose: str = "") -> np.random.Generator:
    """Generator for the stream keyed by (seed, stage, iteration, patch, purpose)."""
    key = stream_key(seed, stage=stage, iteration=iteration,
                     patch_index=patch_index, purpose=purpose)
    return np.random.Generator(np.random.Philox(key=key))
