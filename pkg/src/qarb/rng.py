"""Counter-based random streams.

Every block of paths draws from its own Philox stream keyed by the run
seed, so results do not depend on how blocks are scheduled.
"""
from __future__ import annotations

import numpy as np

BLOCK_SIZE = 4096


def block_generator(seed: int, block_id: int, lane: int = 0) -> np.random.Generator:
    """Generator for block `block_id`; `lane` separates independent uses."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    bitgen = np.random.Philox(key=seed, counter=[0, lane, block_id, 0])
    return np.random.Generator(bitgen)


def blocks(n: int, size: int = BLOCK_SIZE):
    """Yield (block_id, start, stop) covering range(n)."""
    for b, start in enumerate(range(0, n, size)):
        yield b, start, min(start + size, n)
