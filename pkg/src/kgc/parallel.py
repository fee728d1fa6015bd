"""Deterministic block-parallel helpers.

Work is split into blocks of a fixed size that does not depend on the number
of threads, and partial results are reduced in block order, so outputs are
bitwise identical for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

BLOCK = 4096
_threads = 1


def set_threads(n: int) -> None:
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


def map_blocks(fn: Callable[[slice], object], total: int, block: int = BLOCK) -> list:
    slices = [slice(i, min(i + block, total)) for i in range(0, total, block)]
    if _threads == 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(fn, slices))


def ordered_sum(parts: Sequence):
    total = parts[0].copy()
    for p in parts[1:]:
        total += p
    return total
