"""Ordered map over replicate chunks, optionally in worker processes."""

from __future__ import annotations

import functools
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Sequence

from .rng import CHUNK_SIZE, chunk_layout


def map_chunks(
    fn: Callable[..., Any],
    n_replicates: int,
    workers: int = 1,
    chunk_size: int = CHUNK_SIZE,
    **kwargs: Any,
) -> list[Any]:
    """Call ``fn(chunk_index, size, **kwargs)`` for every chunk.

    Results come back in chunk order regardless of ``workers``, so any
    reduction done by the caller is scheduling independent.  ``fn`` and the
    keyword arguments must be picklable when ``workers > 1``.
    """
    layout = chunk_layout(n_replicates, chunk_size)
    call = functools.partial(fn, **kwargs)
    if workers <= 1 or len(layout) == 1:
        return [call(idx, size) for idx, size in layout]
    with ProcessPoolExecutor(max_workers=min(workers, len(layout))) as pool:
        return list(pool.map(call, *zip(*layout)))


def concat(parts: Sequence[Any]):
    import numpy as np

    return np.concatenate(list(parts))
