"""Grid specifications, interpolation, and the shared fixed-order
weighted-sum primitive.

Every stored field level shares one time grid and one node axis per
particle coordinate.  Sharing axes is what makes the cross-level
monotonicity clip (see :mod:`mbfield.cascade`) meaningful node by node,
which in turn is what lets the path simulator guarantee exact agreement
between its killing rule and the capital-crossing rule.
"""

from dataclasses import dataclass

import numpy as np


def weighted_row_sum(weights, columns):
    """Left-to-right accumulation of ``sum_j weights[j] * columns[j]``.

    The one canonical order used for every boundary process
    ``sum_j D_ij Y^j`` in the package, so that two call sites computing
    the same sum get bitwise-identical floats.  ``columns`` is a sequence
    of equal-shape arrays (or scalars).
    """
    acc = None
    for w, col in zip(weights, columns):
        term = w * np.asarray(col, dtype=float)
        acc = term if acc is None else acc + term
    return acc


def build_time_grid(horizon, time_steps, refine_halvings=12):
    """Uniform stored layers plus geometric refinement against the horizon.

    The killing-probability profile sharpens like sqrt(T - t); halving the
    last uniform interval ``refine_halvings`` times keeps time
    interpolation honest there without touching the uniform marching grid.
    """
    if time_steps < 2:
        raise ValueError("time_steps must be >= 2")
    uniform = np.linspace(0.0, horizon, time_steps + 1)
    dt = horizon / time_steps
    extra = [horizon - dt / 2.0**k for k in range(1, refine_halvings + 1)]
    times = np.unique(np.concatenate([uniform, extra]))
    return times


def build_axis(lo_hint, hi_hint, n_nodes, snap=None):
    """Space nodes covering [lo_hint, hi_hint], optionally placing ``snap``
    exactly on a node.

    A barrier that falls between nodes acts like a barrier shifted by up
    to one cell; snapping removes that placement error for the frozen
    level-1 barrier.
    """
    if n_nodes < 2:
        raise ValueError("need at least 2 nodes per axis")
    dx = (hi_hint - lo_hint) / (n_nodes - 1)
    if dx <= 0:
        raise ValueError("lo_hint must be below hi_hint")
    lo = lo_hint
    if snap is not None:
        k = int(np.ceil((snap - lo_hint) / dx - 1e-12))
        lo = snap - k * dx
    n = n_nodes
    while lo + (n - 1) * dx < hi_hint - 1e-12:
        n += 1
    return lo + dx * np.arange(n)


@dataclass(frozen=True)
class GridSpec:
    """Discretization of one configuration's field.

    ``axes`` holds one ascending node array per member of ``config`` (in
    member order); ``times`` is the shared stored time grid and
    ``time_steps`` its uniform step count.
    """

    config: object
    times: np.ndarray
    time_steps: int
    axes: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        for a in axes:
            a.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        if len(axes) != len(self.config):
            raise ValueError("one axis per configuration member required")
        if self.time_steps < 2 or len(times) < 3:
            raise ValueError("need at least 2 time steps")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        for a in axes:
            if len(a) < 2 or np.any(np.diff(a) <= 0):
                raise ValueError("axes must be strictly increasing with >= 2 nodes")

    @property
    def space_min(self):
        return tuple(float(a[0]) for a in self.axes)

    @property
    def space_max(self):
        return tuple(float(a[-1]) for a in self.axes)

    @property
    def space_steps(self):
        return tuple(len(a) for a in self.axes)

    @property
    def space_shape(self):
        return tuple(len(a) for a in self.axes)


def axis_locate(axis, x):
    """Cell index and clamped fractional weight for points ``x``.

    Outside the node range the weight saturates at 0 or 1, realizing the
    clamp-to-box extension; the fields are flat beyond the box so the
    clamp is exact up to tail mass.
    """
    x = np.asarray(x, dtype=float)
    idx = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, len(axis) - 2)
    width = axis[idx + 1] - axis[idx]
    frac = np.clip((x - axis[idx]) / width, 0.0, 1.0)
    return idx, frac


def interp_space(values, axes, points):
    """Multilinear interpolation of ``values`` (shape ``*space``) at
    ``points`` (shape ``(npts, d)``); clamps outside the box."""
    d = len(axes)
    if d == 0:
        return np.full(points.shape[0], float(values))
    idxs, fracs = [], []
    for a in range(d):
        i, f = axis_locate(axes[a], points[:, a])
        idxs.append(i)
        fracs.append(f)
    out = np.zeros(points.shape[0])
    for corner in range(1 << d):
        w = np.ones(points.shape[0])
        coords = []
        for a in range(d):
            hi = corner >> a & 1
            w = w * (fracs[a] if hi else 1.0 - fracs[a])
            coords.append(idxs[a] + hi)
        out += w * values[tuple(coords)]
    return out


def time_bracket(times, t):
    """Slab index k and weight theta with t ~ (1-theta) t_k + theta t_{k+1}."""
    k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
    theta = (t - times[k]) / (times[k + 1] - times[k])
    return k, float(np.clip(theta, 0.0, 1.0))
