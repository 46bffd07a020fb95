"""Seeded RNG streams and the per-protein worker pool."""

import os
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

STREAMS = ("graph-aug", "masking", "init", "shuffling", "dropout")


def rng_stream(seed, name, *keys):
    """Independent generator for ``(seed, name, *keys)``.

    Every random draw in a run comes from one of these, so a single seed
    reproduces the whole run and stream ``name`` is unaffected by how much
    any other stream consumed.
    """
    if name not in STREAMS:
        raise ValueError(f"unknown RNG stream {name!r}; expected one of {STREAMS}")
    entropy = [int(seed), zlib.crc32(name.encode())] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def num_threads():
    raw = os.environ.get("GEARNET_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"GEARNET_THREADS must be an integer, got {raw!r}") from None
    return max(1, value)


def parallel_map(fn, items):
    """``[fn(x) for x in items]``, spread over ``GEARNET_THREADS`` threads.

    Results come back in input order, so reductions over them are
    deterministic regardless of scheduling.
    """
    items = list(items)
    workers = min(num_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
