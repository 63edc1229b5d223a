"""Deterministic, worker-count-independent random streams.

Every stochastic routine derives its randomness from a counter-based
Philox generator keyed by ``(seed, *subkeys)``.  Work is partitioned into
fixed-size chunks whose keys do not depend on how many workers process
them, so results are bit-identical at any parallelism level.
"""

import numpy as np

CHUNK = 4096  # paths per stream chunk; fixed so chunking never depends on workers


def substream(seed, *subkeys):
    """Independent generator for a (seed, subkey...) coordinate."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in subkeys))
    return np.random.Generator(np.random.Philox(seed=ss))


def chunk_ranges(n_items, chunk=CHUNK):
    """Fixed partition of range(n_items) into (start, stop) chunks."""
    return [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]


class IncrementSource:
    """Per-chunk Gaussian increment blocks for path simulation.

    Chunk ``c`` draws its ``(paths, steps, n)`` standard normals from the
    substream ``(seed, tag, c)`` in blocks of ``block_steps`` along the
    time axis, always in block order.  Any consumer that walks blocks in
    order sees the same numbers, whether it steps through time one step
    at a time or a whole block at once.
    """

    def __init__(self, seed, tag, n_particles, n_steps, block_steps=1024):
        self.seed = int(seed)
        self.tag = int(tag)
        self.n = int(n_particles)
        self.n_steps = int(n_steps)
        self.block_steps = int(block_steps)

    def n_blocks(self):
        return -(-self.n_steps // self.block_steps)

    def block_slice(self, b):
        lo = b * self.block_steps
        return lo, min(lo + self.block_steps, self.n_steps)

    def chunk_blocks(self, chunk_index, n_paths_in_chunk):
        """Yield (lo_step, hi_step, normals) with normals shaped
        (n_paths_in_chunk, hi-lo, n)."""
        gen = substream(self.seed, self.tag, chunk_index)
        for b in range(self.n_blocks()):
            lo, hi = self.block_slice(b)
            yield lo, hi, gen.standard_normal((n_paths_in_chunk, hi - lo, self.n))
