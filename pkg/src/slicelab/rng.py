"""Counter-based random streams for reproducible parallel chains.

Every chain gets its own Philox stream keyed by ``(master_seed, chain_index)``.
Within a stream the Philox counter advances with the draws, so the state
consumed at step ``k`` of chain ``i`` is a pure function of
``(master_seed, i, k)`` and never depends on scheduling or worker count.
"""
from __future__ import annotations

import numpy as np

__all__ = ["stream", "spawn_streams"]


def stream(master_seed: int, chain_index: int = 0) -> np.random.Generator:
    """Return the Philox generator for one chain of one experiment."""
    if master_seed < 0 or chain_index < 0:
        raise ValueError("seed and chain index must be nonnegative")
    key = np.array([master_seed, chain_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def spawn_streams(master_seed: int, n_chains: int) -> list[np.random.Generator]:
    """Independent generators for ``n_chains`` chains under one master seed."""
    return [stream(master_seed, i) for i in range(n_chains)]
