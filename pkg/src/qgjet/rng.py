"""Counter-based random streams.

Every stochastic component draws from a Philox generator keyed by
``(seed, folded path)``, so independent pieces of work (events, samples,
epochs) get independent streams regardless of execution order.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fold(parts: tuple) -> int:
    """FNV-1a over the byte encoding of each path element."""
    h = _FNV_OFFSET
    for part in parts:
        if isinstance(part, str):
            data = part.encode("utf-8")
        else:
            data = int(part).to_bytes(8, "little", signed=True)
        for b in data:
            h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def stream(seed: int, *path) -> np.random.Generator:
    """Independent generator for the sub-stream named by ``path``."""
    key = np.array([seed & _MASK64, _fold(path)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
