"""Counter-based random streams keyed by (master seed, purpose, indices).

Every stochastic routine in the package draws from a ``numpy.random.Generator``
backed by Philox.  Streams are derived from the master seed plus a tuple of
integer keys, so a chunk of replicates always sees the same random numbers no
matter which worker process runs it or in which order.
"""

from __future__ import annotations

import zlib

import numpy as np

# Replicates are processed in fixed-size chunks; each chunk owns one stream.
# Changing this constant changes every Monte Carlo result, so it is not a knob.
CHUNK_SIZE = 4096


def purpose_tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(master_seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Return the generator for ``(master_seed, purpose, *keys)``."""
    if master_seed < 0 or master_seed >= 2**64:
        raise ValueError(f"master seed must be an unsigned 64-bit integer, got {master_seed}")
    spawn_key = (purpose_tag(purpose),) + tuple(int(k) for k in keys)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def chunk_layout(n_replicates: int, chunk_size: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    """Split ``n_replicates`` into ``(chunk_index, size)`` pairs."""
    if n_replicates < 1:
        raise ValueError("need at least one replicate")
    out = []
    start = 0
    idx = 0
    while start < n_replicates:
        size = min(chunk_size, n_replicates - start)
        out.append((idx, size))
        start += size
        idx += 1
    return out
