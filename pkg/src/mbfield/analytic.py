"""Closed-form ingredients: the Gaussian CDF, the reflection-principle
first-passage probability of driftless Brownian motion below a constant
barrier, the one-alive-particle killing-probability field it induces, and
a brute-force random-walk oracle used by the tests.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .rng import chunk_ranges, substream


def std_normal_cdf(z):
    """Standard normal CDF, accurate to well below 1e-12 (erf-based)."""
    return ndtr(z)


@dataclass(frozen=True)
class FirstPassageQuery:
    """Barrier-crossing query for one Brownian coordinate on [now, horizon]."""

    now: float
    state: float
    barrier: float
    sigma: float
    horizon: float

    def __post_init__(self):
        if not self.now <= self.horizon:
            raise ValueError("query time must not exceed the horizon")
        if not self.sigma > 0.0:
            raise ValueError("sigma must be positive")


def first_passage_prob(q):
    """P(min_{s in [t, T]} X_s <= b | X_t = x) for dX = sigma dW.

    Equals ``2 Phi(((b - x) ^ 0) / (sigma sqrt(T - t)))`` for t < T by the
    reflection principle; degenerates to the indicator of ``x <= b`` at
    t = T.  States at or below the barrier count as already absorbed.
    """
    return float(
        first_passage_values(q.now, np.asarray(q.state, dtype=float), q.barrier,
                             q.sigma, q.horizon)
    )


def first_passage_values(t, x, barrier, sigma, horizon):
    """Vectorized form of :func:`first_passage_prob` over states ``x``."""
    x = np.asarray(x, dtype=float)
    remaining = horizon - t
    if remaining <= 0.0:
        return np.where(x <= barrier, 1.0, 0.0)
    z = np.minimum(barrier - x, 0.0) / (sigma * np.sqrt(remaining))
    return 2.0 * ndtr(z)


def level1_field(t, x, threshold, params):
    """Killing probability of the last alive particle.

    With every other particle absorbed, the boundary is frozen at the
    weight row sum (``alpha N`` in the all-equal network), so the field is
    the plain first-passage probability below that constant threshold.
    The value does not depend on which single particle is still alive.
    """
    return first_passage_values(t, x, threshold, params.sigma, params.horizon)


def mc_first_passage_oracle(q, steps, paths, seed):
    """Euler walk estimate of :func:`first_passage_prob`.

    The barrier is checked at the grid times only, so the estimate is
    biased low by O(sqrt(dt)).  Deterministic for fixed
    ``(seed, steps, paths)`` at any worker count: each fixed 4096-path
    chunk draws from its own counter-based substream.

    Returns (estimate, standard_error).
    """
    if steps < 1 or paths < 1:
        raise ValueError("steps and paths must be >= 1")
    if q.state <= q.barrier:
        return 1.0, 0.0
    remaining = q.horizon - q.now
    if remaining <= 0.0:
        return 0.0, 0.0
    dt = remaining / steps
    scale = q.sigma * np.sqrt(dt)
    hits = 0
    for ci, (lo, hi) in enumerate(chunk_ranges(paths)):
        n = hi - lo
        gen = substream(seed, 0, ci)
        alive = np.full(n, True)
        pos = np.full(n, q.state, dtype=float)
        done = 0
        while done < steps and alive.any():
            block = min(1024, steps - done)
            inc = gen.standard_normal((n, block)) * scale
            # positions of still-alive paths over the block; dead paths draw
            # increments too, keeping the stream layout fixed
            runmin = np.minimum.accumulate(pos[:, None] + np.cumsum(inc, axis=1), axis=1).min(axis=1)
            newly = alive & (runmin <= q.barrier)
            alive &= ~newly
            pos += inc.sum(axis=1)
            done += block
        hits += int(np.count_nonzero(~alive))
    p = hits / paths
    se = np.sqrt(p * (1.0 - p) / paths)
    return float(p), float(se)
