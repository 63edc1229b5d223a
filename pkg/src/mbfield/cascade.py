"""Level-by-level construction and evaluation of the tiered
killing-probability fields.

For each configuration ``I`` of alive particles and each particle ``i``,
the field value at ``(t, x)`` is the conditional probability that ``i``
is absorbed by the horizon, given that exactly the particles in ``I``
are alive with states ``x``.  Inside the moving domain the field solves
a backward heat equation; on and beyond the boundary it equals the field
of the configuration with the minimal dead index removed; at the horizon
it is the dead-set indicator.  Levels are built strictly bottom-up: the
boundary of level ``|I|`` is assembled from level ``|I| - 1``.

Evaluation (:func:`eval_field`) resolves the killing cascade first and
interpolates only in-domain, so a query below the boundary reproduces
the reduced system's value rather than an interpolation smear across the
jump.  The same resolution routine drives the path simulator, which is
what makes the simulator's killing times bitwise consistent with the
capital processes derived from its output.
"""

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import ndtr

from .analytic import first_passage_values
from .errors import (
    BudgetError,
    BracketNotFound,
    DimensionUnsupported,
    LevelNotBuilt,
    NotOnOrOutsideBoundary,
    StabilityViolation,
)
from .grids import (
    GridSpec,
    build_axis,
    build_time_grid,
    interp_space,
    time_bracket,
    weighted_row_sum,
)
from .rng import substream
from .system import IndexSet, enumerate_configs

TAU_MONO = 1e-8   # monotonicity slack tolerated in stored grids
TAU_BC = 1e-6     # debug-mode agreement of boundary values across dead indices

# explicit-scheme CFL numbers per axis pass; 1/6 cancels the leading
# lattice error in 1-D, 1/8 respects dt <= dx^2 / (2 |I| sigma^2) in 2-D
_R_MAX = {1: 1.0 / 6.0, 2: 1.0 / 8.0}


@dataclass(frozen=True)
class FieldGrid:
    """Stored values of one configuration's fields on a space-time grid.

    ``values[k, ..., c]`` is the field of member ``spec.config.members[c]``
    at stored time ``spec.times[k]``; fields of non-members are identically
    one and are not stored.
    """

    spec: GridSpec
    values: np.ndarray
    build_info: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = (len(self.spec.times),) + self.spec.space_shape + (len(self.spec.config),)
        if values.shape != expected:
            raise ValueError(f"values shape {values.shape} != {expected}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def members(self):
        return self.spec.config.members

    def member_column(self, i):
        return self.members.index(i)


@dataclass(frozen=True)
class DecouplingField:
    """The complete family of fields, one grid per configuration."""

    params: object
    network: object
    grids: dict
    method: str = "fd"
    meta: dict = dc_field(default_factory=dict)

    def grid_for(self, config):
        try:
            return self.grids[config.mask]
        except KeyError:
            raise LevelNotBuilt(config) from None

    def is_complete(self):
        return all(
            c.mask in self.grids for c in enumerate_configs(self.params.n_particles)
        )


def base_field(params, network, times=None, time_steps=240):
    """A field holding only the empty-configuration level (constant one).

    Starting point for building levels one at a time with the level
    solvers; :func:`build_cascade` does this for every configuration.
    """
    if times is None:
        times = build_time_grid(params.horizon, time_steps)
    spec = GridSpec(IndexSet.empty(), times, time_steps, ())
    grids = {0: FieldGrid(spec, np.zeros((len(times), 0)))}
    return DecouplingField(params, network, grids)


# ---------------------------------------------------------------------------
# evaluation: cascade resolution + interpolation


def _grid_member_values(grid, col, t, points):
    """Interpolated stored values of one member at scalar time ``t``.

    The final clip keeps convex-combination rounding from ever leaving
    [0, 1]; the simulator's exact-consistency argument compares these
    values against 1.0 termwise.
    """
    k, theta = time_bracket(grid.spec.times, t)
    out = interp_space(grid.values[k, ..., col], grid.spec.axes, points)
    if theta != 0.0:
        hi = interp_space(grid.values[k + 1, ..., col], grid.spec.axes, points)
        out = (1.0 - theta) * out + theta * hi
    return np.clip(out, 0.0, 1.0)


def _thresholds_batch(field, config, t, points):
    """Killing thresholds sum_j D_ij v^{I\\i,j}(t, x^{-i}) per member.

    Column ``c`` belongs to ``config.members[c]``.  Uses the canonical
    fixed-order weighted sum so every caller computing the same threshold
    sees the same float.
    """
    n = field.params.n_particles
    D = field.network.entries
    thr = np.empty((points.shape[0], len(config)))
    for c, i in enumerate(config.members):
        sub = config.remove(i)
        sub_points = np.delete(points, c, axis=1)
        vals, _ = _resolve(field, sub, t, sub_points)
        thr[:, c] = weighted_row_sum(D[i - 1], [vals[:, j] for j in range(n)])
    return thr


def _resolve(field, config, t, points, events=None, point_ids=None, depth=0):
    """Resolve the killing cascade at ``(t, points)`` for ``config``.

    Repeatedly removes the minimal dead member until the remaining
    configuration contains the point in its domain, then evaluates.
    Returns ``(values, alive)``, both of shape ``(npts, N)``; dead
    particles carry value 1.  If ``events`` is a list, appends
    ``(point_id_subset, depth, removed_member)`` per removal, in order.
    """
    n = field.params.n_particles
    npts = points.shape[0]
    values = np.ones((npts, n))
    alive = np.zeros((npts, n), dtype=bool)
    if len(config) == 0 or npts == 0:
        return values, alive
    thr = _thresholds_batch(field, config, t, points)
    dead = points <= thr
    bad = dead.any(axis=1)
    ok = ~bad
    if ok.any():
        pts_ok = points[ok]
        if t >= field.params.horizon:
            member_vals = np.zeros((pts_ok.shape[0], len(config)))
        else:
            grid = field.grid_for(config)
            member_vals = np.stack(
                [_grid_member_values(grid, c, t, pts_ok) for c in range(len(config))],
                axis=1,
            )
        for c, m in enumerate(config.members):
            values[ok, m - 1] = member_vals[:, c]
            alive[ok, m - 1] = True
    if bad.any():
        bad_rows = np.nonzero(bad)[0]
        first_dead = np.argmax(dead[bad_rows], axis=1)  # minimal member: columns ascend
        for c in np.unique(first_dead):
            sel = bad_rows[first_dead == c]
            m0 = config.members[c]
            if events is not None:
                events.append((point_ids[sel].copy(), depth, m0))
            sub_vals, sub_alive = _resolve(
                field,
                config.remove(m0),
                t,
                np.delete(points[sel], c, axis=1),
                events,
                None if point_ids is None else point_ids[sel],
                depth + 1,
            )
            values[sel] = sub_vals
            alive[sel] = sub_alive
    return values, alive


def resolve_states(field, config, t, points, events=None, point_ids=None):
    """Batch cascade resolution used by the path simulator.

    ``points`` has one column per member of ``config``.  Returns
    ``(values, alive)`` arrays of shape ``(npts, N)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if point_ids is None and events is not None:
        point_ids = np.arange(points.shape[0])
    return _resolve(field, config, t, points, events, point_ids)


def eval_field(field, config, i, t, x):
    """Field of particle ``i`` in configuration ``config`` at ``(t, x)``.

    ``x`` holds the coordinates of the members of ``config`` in member
    order.  Returns 1 for ``i`` outside the configuration; queries on or
    below the boundary resolve through the reduced configurations.
    """
    if i not in config:
        return 1.0
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    values, _ = _resolve(field, config, t, pts)
    return float(values[0, i - 1])


def boundary_threshold(field, config, i, t, x_minus_i):
    """Killing threshold of member ``i``: sum_j D_ij v^{I\\i,j}(t, x^{-i})."""
    if i not in config:
        raise ValueError(f"particle {i} is not a member of {config}")
    n = field.params.n_particles
    sub = config.remove(i)
    pts = np.atleast_2d(np.asarray(x_minus_i, dtype=float))
    if pts.shape[1] != len(sub):
        raise ValueError(f"expected {len(sub)} coordinates for {sub}")
    vals, _ = _resolve(field, sub, t, pts)
    return float(weighted_row_sum(field.network.entries[i - 1],
                                  [vals[0, j] for j in range(n)]))


def dead_index_set(field, config, t, x):
    """Members at or below their killing thresholds at ``(t, x)``."""
    if len(config) == 0:
        return IndexSet.empty()
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    thr = _thresholds_batch(field, config, t, pts)
    dead = pts[0] <= thr[0]
    return IndexSet([m for m, d in zip(config.members, dead) if d])


def domain_contains(field, config, t, x):
    """True iff every member sits strictly above its threshold."""
    return len(dead_index_set(field, config, t, x)) == 0


def boundary_value(field, config, i, t, x, debug=False):
    """Boundary condition: the reduced system's value after removing the
    minimal dead index.

    With ``debug`` the values across all dead indices must agree within
    ``TAU_BC``; they coincide exactly for the continuous fields, while
    numerically built levels agree only approximately.
    """
    dead = dead_index_set(field, config, t, x)
    if len(dead) == 0:
        raise NotOnOrOutsideBoundary(f"({t}, {x}) is inside the domain of {config}")
    x = np.asarray(x, dtype=float)

    def reduced_value(ell):
        c = config.members.index(ell)
        return eval_field(field, config.remove(ell), i, t, np.delete(x, c))

    out = reduced_value(dead.min_member)
    if debug:
        vals = [reduced_value(ell) for ell in dead]
        if max(vals) - min(vals) > TAU_BC:
            raise AssertionError(
                f"boundary values disagree across dead indices {dead}: {vals}"
            )
    return out


def terminal_value(field, config, i, x):
    """Horizon value: 1 for dead-at-T members and non-members, else 0."""
    if i not in config:
        return 1
    dead = dead_index_set(field, config, field.params.horizon, x)
    return 1 if i in dead else 0


# ---------------------------------------------------------------------------
# finite-difference level solver


def _level1_threshold_arrays(network, config, lower, t, spec):
    """Per-axis thresholds for a two-member configuration.

    The threshold of member ``a`` depends only on the other coordinate:
    thr_a(x_b) = sum_{j != b} D_aj + D_ab w_b(t, x_b) with w_b the
    one-particle field of ``b``.  Returns (thr_a over axis_b, thr_b over
    axis_a, w_a over axis_a, w_b over axis_b).
    """
    D = network.entries
    rs = network.row_sums
    a, b = config.members
    ga = lower.grid_for(IndexSet([a]))
    gb = lower.grid_for(IndexSet([b]))
    wa = _grid_member_values(ga, 0, t, spec.axes[0][:, None])
    wb = _grid_member_values(gb, 0, t, spec.axes[1][:, None])
    thr_a = (rs[a - 1] - D[a - 1, b - 1]) + D[a - 1, b - 1] * wb
    thr_b = (rs[b - 1] - D[b - 1, a - 1]) + D[b - 1, a - 1] * wa
    return thr_a, thr_b, wa, wb


def _bc_masks_values(params, network, config, lower, t, spec):
    """Dead-region mask and boundary values on the node mesh at time ``t``.

    Thresholds for a member depend only on the other coordinates, so both
    decompose into broadcasts of per-axis arrays.  Returns
    ``(dead_any, vals)`` with ``vals`` filled at dead nodes.
    """
    axes = spec.axes
    if len(config) == 1:
        (i,) = config.members
        dead = axes[0] <= float(network.row_sums[i - 1])
        vals = np.zeros((len(axes[0]), 1))
        vals[dead, 0] = 1.0
        return dead, vals
    thr_a, thr_b, wa, wb = _level1_threshold_arrays(network, config, lower, t, spec)
    dead_a = axes[0][:, None] <= thr_a[None, :]
    dead_b = axes[1][None, :] <= thr_b[:, None]
    na, nb = len(axes[0]), len(axes[1])
    vals = np.zeros((na, nb, 2))
    # minimal dead index is the first member wherever it is dead; the other
    # member's value then reduces to its one-particle field, which is
    # already 1 across the both-dead corner
    vals[..., 0] = np.where(dead_a, 1.0, np.where(dead_b, wa[:, None], 0.0))
    vals[..., 1] = np.where(dead_a, np.broadcast_to(wb[None, :], (na, nb)),
                            np.where(dead_b, 1.0, 0.0))
    return dead_a | dead_b, vals


def _terminal_layer(params, network, config, spec):
    """Horizon layer: per-member dead-set indicators."""
    D = network.entries
    rs = network.row_sums
    axes = spec.axes
    if len(config) == 1:
        (i,) = config.members
        return (axes[0] <= rs[i - 1]).astype(float)[:, None]
    a, b = config.members
    ind_a = (axes[0] <= rs[a - 1]).astype(float)
    ind_b = (axes[1] <= rs[b - 1]).astype(float)
    thr_a = (rs[a - 1] - D[a - 1, b - 1]) + D[a - 1, b - 1] * ind_b
    thr_b = (rs[b - 1] - D[b - 1, a - 1]) + D[b - 1, a - 1] * ind_a
    out = np.zeros((len(axes[0]), len(axes[1]), 2))
    out[..., 0] = (axes[0][:, None] <= thr_a[None, :]).astype(float)
    out[..., 1] = (axes[1][None, :] <= thr_b[:, None]).astype(float)
    return out


def _warm_layer(params, network, config, lower, t, spec):
    """Frozen-boundary layer used against the horizon.

    With boundary and boundary value frozen at ``t``, the coordinates
    decouple into independent constant-barrier crossings, for which the
    reflection principle is exact.  This covers the short warm window
    where marching from the indicator data would be under-resolved.
    """
    sigma, horizon = params.sigma, params.horizon
    rs = network.row_sums
    axes = spec.axes
    if len(config) == 1:
        (i,) = config.members
        return first_passage_values(t, axes[0], float(rs[i - 1]), sigma, horizon)[:, None]
    thr_a, thr_b, wa, wb = _level1_threshold_arrays(network, config, lower, t, spec)
    s = sigma * np.sqrt(horizon - t)
    p_a = 2.0 * ndtr(np.minimum(thr_a[None, :] - axes[0][:, None], 0.0) / s)
    p_b = 2.0 * ndtr(np.minimum(thr_b[:, None] - axes[1][None, :], 0.0) / s)
    out = np.empty((len(axes[0]), len(axes[1]), 2))
    out[..., 0] = p_a + (1.0 - p_a) * p_b * wa[:, None]
    out[..., 1] = p_b + (1.0 - p_b) * p_a * wb[None, :]
    np.clip(out, 0.0, 1.0, out=out)
    dead_any, bc = _bc_masks_values(params, network, config, lower, t, spec)
    out[dead_any] = bc[dead_any]
    return out


def _heat_pass(v, r, axis):
    """One explicit trinomial substep along ``axis``; off-grid neighbors
    repeat the edge value (clamped extension)."""
    out = v.copy()
    w = np.moveaxis(v, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] += r * (w[2:] - 2.0 * w[1:-1] + w[:-2])
    o[0] += r * (w[1] - w[0])
    o[-1] += r * (w[-2] - w[-1])
    return out


def _cummax_reversed(a, axis):
    a = np.flip(a, axis=axis).copy()
    np.maximum.accumulate(a, axis=axis, out=a)
    return np.flip(a, axis=axis)


def _isotonic_pass(values):
    """Enforce the nonincreasing-solution shape on a stored grid.

    Sequential reversed running maxima; each pass is monotone, so later
    passes preserve earlier ones.  Returns (new_values, max_correction).
    """
    out = values
    for axis in range(1, values.ndim - 1):  # space axes: nonincreasing in x
        out = _cummax_reversed(out, axis)
    out = _cummax_reversed(out, 0)          # time axis: nonincreasing in t
    corr = float(np.max(np.abs(out - values))) if values.size else 0.0
    return out, corr


def _cross_level_clip(values, spec, config, lower):
    """Clip stored values below every one-member-removed level.

    Continuous fields satisfy v^{I,j} <= v^{I\\i,j}; enforcing it node by
    node (levels share axes) makes the interpolated evaluator respect the
    same ordering, which the simulator's exact-consistency argument needs.
    """
    out = values.copy()
    for c, i in enumerate(config.members):
        sub = config.remove(i)
        try:
            sub_grid = lower.grid_for(sub)
        except LevelNotBuilt:
            continue
        shared = len(sub) == 0 or (
            np.array_equal(sub_grid.spec.times, spec.times)
            and all(
                np.array_equal(sub_grid.spec.axes[k],
                               spec.axes[config.members.index(m)])
                for k, m in enumerate(sub.members)
            )
        )
        for cj, j in enumerate(config.members):
            if j == i or j not in sub:
                continue  # v^{I\\j, j} is identically 1; the [0,1] clip covers it
            sub_col = sub.members.index(j)
            if shared:
                bound = np.expand_dims(sub_grid.values[..., sub_col], axis=1 + c)
                out[..., cj] = np.minimum(out[..., cj], bound)
            else:
                sub_axes = [spec.axes[config.members.index(m)] for m in sub.members]
                mesh = np.meshgrid(*sub_axes, indexing="ij")
                pts = np.column_stack([m.ravel() for m in mesh])
                sub_shape = tuple(len(a) for a in sub_axes)
                for k, t in enumerate(spec.times):
                    layer = _grid_member_values(sub_grid, sub_col, t, pts)
                    bound = np.expand_dims(layer.reshape(sub_shape), axis=c)
                    out[k, ..., cj] = np.minimum(out[k, ..., cj], bound)
    np.clip(out, 0.0, 1.0, out=out)
    return out


def solve_level_fd(params, network, config, lower, spec,
                   substep_budget=2_000_000, n_warm=1):
    """Explicit backward-in-time finite differences for one level.

    Supports one- and two-member configurations.  Marches the heat
    equation between stored layers with per-axis CFL numbers at most
    ``_R_MAX[d]`` (axis-split in 2-D), overwriting the dead region with
    boundary values at every substep.  The ``n_warm`` uniform layers
    against the horizon are seeded from the frozen-boundary profile:
    marching from the raw indicator data would leave an
    O(dx^2 / (T - t)) error spike at the terminal corner.
    """
    d = len(config)
    if d == 0:
        return FieldGrid(spec, np.zeros((len(spec.times), 0)))
    if d > 2:
        raise DimensionUnsupported(
            f"finite differences support |I| <= 2, got |I| = {d}"
        )
    buffer = network.row_sum_max + 3.0 * params.sigma * np.sqrt(params.horizon)
    for hi in spec.space_max:
        if hi < buffer - 1e-9:
            raise ValueError(
                f"axis upper bound {hi} below row_sum_max + 3 sigma sqrt(T) = {buffer}"
            )
    times = spec.times
    nt = len(times)
    values = np.empty((nt,) + spec.space_shape + (d,))
    values[-1] = _terminal_layer(params, network, config, spec)

    dt_uniform = params.horizon / spec.time_steps
    warm_cut = params.horizon - n_warm * dt_uniform - 1e-12
    dxs = [float(a[1] - a[0]) for a in spec.axes]
    dt_sub_max = min(2.0 * _R_MAX[d] * dx * dx / params.sigma**2 for dx in dxs)
    total_sub = sum(
        max(1, int(np.ceil((times[k + 1] - times[k]) / dt_sub_max)))
        for k in range(nt - 1)
        if times[k] < warm_cut
    )
    if total_sub > substep_budget:
        raise StabilityViolation(
            f"{total_sub} substeps needed for stability exceed budget {substep_budget}"
        )

    v = None
    for k in range(nt - 2, -1, -1):
        t_lo, t_hi = times[k], times[k + 1]
        if t_lo >= warm_cut:
            values[k] = _warm_layer(params, network, config, lower, t_lo, spec)
            continue
        if v is None:
            v = values[k + 1].copy()
        span = t_hi - t_lo
        nsub = max(1, int(np.ceil(span / dt_sub_max)))
        dt_sub = span / nsub
        for s in range(nsub):
            t_sub = max(t_hi - (s + 1) * dt_sub, t_lo)
            for axis, dx in enumerate(dxs):
                r = params.sigma**2 * dt_sub / (2.0 * dx * dx)
                v = _heat_pass(v, r, axis)
            dead_any, bc = _bc_masks_values(params, network, config, lower,
                                            t_sub, spec)
            v[dead_any] = bc[dead_any]
        values[k] = v
        v = values[k].copy()

    values, corr = _isotonic_pass(values)
    values = _cross_level_clip(values, spec, config, lower)
    return FieldGrid(spec, values, build_info={
        "method": "fd", "isotonic_correction": corr, "n_warm": n_warm,
        "substeps": total_sub,
    })


# ---------------------------------------------------------------------------
# Monte Carlo level solver


def solve_level_mc(params, network, config, lower, points, walk):
    """Hitting-probability representation estimated by simulation.

    For each query ``(t, x)``, drives ``|I|`` independent driftless walks
    on a uniform grid of ``steps`` over ``[t, T]``, detects the first
    grid time with a nonempty dead set, and averages the boundary value
    there (zero if the walk survives to the horizon).  Killing is checked
    at grid times only, biasing estimates low by O(sqrt(dt)).
    Deterministic per point for fixed ``(steps, paths, seed)``.

    Returns one dict per point mapping member -> (estimate, std_error).
    """
    steps, paths, seed = walk
    if steps < 1 or paths < 1:
        raise ValueError("steps and paths must be >= 1")
    d = len(config)
    for i in config.members:
        lower.grid_for(config.remove(i))  # LevelNotBuilt early
    out = []
    for p_idx, (t0, x0) in enumerate(points):
        x0 = np.asarray(x0, dtype=float).reshape(d)
        gen = substream(seed, 1, p_idx)
        dt = (params.horizon - t0) / steps
        scale = params.sigma * np.sqrt(dt)
        sums = {i: 0.0 for i in config.members}
        sq_sums = {i: 0.0 for i in config.members}
        for lo, hi in _mc_chunks(paths):
            n = hi - lo
            pos = np.tile(x0, (n, 1))
            live = np.arange(n)
            contrib = {i: np.zeros(n) for i in config.members}
            for k in range(steps + 1):
                t = t0 + k * dt if k < steps else params.horizon
                if live.size:
                    pts = pos[live]
                    thr = _thresholds_batch(lower, config, t, pts)
                    hit = (pts <= thr).any(axis=1)
                    if hit.any():
                        vals, _ = _resolve(lower, config, t, pts[hit])
                        rows = live[hit]
                        for i in config.members:
                            contrib[i][rows] = vals[:, i - 1]
                        live = live[~hit]
                if k < steps:
                    inc = gen.standard_normal((n, d)) * scale
                    if live.size:
                        pos[live] += inc[live]
            for i in config.members:
                sums[i] += contrib[i].sum()
                sq_sums[i] += (contrib[i] ** 2).sum()
        result = {}
        for i in config.members:
            mean = sums[i] / paths
            var = max(sq_sums[i] / paths - mean**2, 0.0)
            result[i] = (float(mean), float(np.sqrt(var / paths)))
        out.append(result)
    return out


def _mc_chunks(paths, chunk=4096):
    return [(s, min(s + chunk, paths)) for s in range(0, paths, chunk)]


# ---------------------------------------------------------------------------
# cascade assembly


def default_grid_policy(params, network, space_steps=240, time_steps=240,
                        refine_halvings=12):
    """Shared axes and time grid for a full cascade build.

    Axes reach from one cell below ``min(0, -sigma)`` (the fields are
    constant below the all-dead orthant) up to ``row_sum_max + 3 sigma
    sqrt(T)``, and each particle's level-1 barrier (its weight row sum)
    sits exactly on a node: a barrier between nodes acts like a barrier
    shifted by up to a cell.
    """
    horizon, sigma = params.horizon, params.sigma
    times = build_time_grid(horizon, time_steps, refine_halvings)
    hi = network.row_sum_max + 3.0 * sigma * np.sqrt(horizon)
    lo = min(0.0, -sigma)
    axes = []
    for i in range(params.n_particles):
        ax = build_axis(lo, hi, space_steps, snap=float(network.row_sums[i]))
        dx = ax[1] - ax[0]
        axes.append(np.concatenate([[ax[0] - dx], ax]))
    return times, time_steps, axes


def build_cascade(params, network, method="fd", space_steps=240, time_steps=240,
                  mc_walk=None, seed=0, substep_budget=2_000_000,
                  mc_node_budget=50_000_000):
    """Build the complete field family, level by level.

    Level 0 is constant one; level 1 is filled from the constant-barrier
    closed form whatever the method; higher levels use the
    finite-difference solver (``method='fd'``, two members at most) or
    the Monte Carlo solver on every grid node (``method='mc'``).
    """
    if method not in ("fd", "mc"):
        raise ValueError(f"unknown method {method!r}")
    if network.entries.shape[0] != params.n_particles:
        raise ValueError("network size does not match n_particles")
    times, m_uniform, axes = default_grid_policy(params, network,
                                                 space_steps, time_steps)
    grids = {}
    partial = DecouplingField(params, network, grids, method=method)
    build_order = []
    corrections = {}
    for config in enumerate_configs(params.n_particles):
        spec = GridSpec(config, times, m_uniform,
                        tuple(axes[i - 1] for i in config.members))
        if len(config) == 0:
            grid = FieldGrid(spec, np.zeros((len(times), 0)))
        elif len(config) == 1:
            grid = _closed_form_level1(params, network, config, spec)
        elif method == "fd":
            grid = solve_level_fd(params, network, config, partial, spec,
                                  substep_budget=substep_budget)
        else:
            grid = _build_level_mc_grid(params, network, config, partial, spec,
                                        mc_walk or (200, 2000, seed),
                                        mc_node_budget)
        grids[config.mask] = grid
        build_order.append(config.mask)
        corrections[str(config)] = grid.build_info.get("isotonic_correction", 0.0)
    meta = {
        "method": method,
        "seed": seed,
        "mc_walk": mc_walk,
        "space_steps": space_steps,
        "time_steps": time_steps,
        "tau_mono": TAU_MONO,
        "tau_bc": TAU_BC,
        "build_order": build_order,
        "isotonic_corrections": corrections,
    }
    return DecouplingField(params, network, grids, method=method, meta=meta)


def _closed_form_level1(params, network, config, spec):
    """One-member level from the constant-barrier reflection formula."""
    (i,) = config.members
    barrier = float(network.row_sums[i - 1])
    layer = np.empty((len(spec.times), len(spec.axes[0]), 1))
    for k, t in enumerate(spec.times):
        layer[k, :, 0] = first_passage_values(t, spec.axes[0], barrier,
                                              params.sigma, params.horizon)
    return FieldGrid(spec, layer, build_info={"method": "closed-form"})


def _build_level_mc_grid(params, network, config, lower, spec, walk, node_budget):
    """Populate one level's grid with Monte Carlo estimates at every node."""
    steps, paths, seed = walk
    shape = spec.space_shape
    n_nodes = int(np.prod(shape))
    n_layers = len(spec.times)
    if n_nodes * n_layers * paths > node_budget:
        raise BudgetError(
            f"MC grid build needs {n_nodes * n_layers} node solves x {paths} paths; "
            f"budget is {node_budget}"
        )
    mesh = np.meshgrid(*spec.axes, indexing="ij")
    nodes = np.column_stack([m.ravel() for m in mesh])
    values = np.empty((n_layers,) + shape + (len(config),))
    values[-1] = _terminal_layer(params, network, config, spec)
    for k in range(n_layers - 2, -1, -1):
        t = spec.times[k]
        results = solve_level_mc(params, network, config, lower,
                                 [(t, x) for x in nodes], (steps, paths, seed + k))
        layer = np.empty(shape + (len(config),))
        for c, i in enumerate(config.members):
            layer[..., c] = np.array([r[i][0] for r in results]).reshape(shape)
        dead_any, bc = _bc_masks_values(params, network, config, lower, t, spec)
        layer[dead_any] = bc[dead_any]
        values[k] = layer
    values, corr = _isotonic_pass(values)
    values = _cross_level_clip(values, spec, config, lower)
    if corr > 0.05:
        warnings.warn(f"MC grid for {config} needed isotonic correction {corr:.3g}")
    return FieldGrid(spec, values, build_info={
        "method": "mc", "isotonic_correction": corr, "walk": walk,
    })


# ---------------------------------------------------------------------------
# boundary geometry


def boundary_profile(field, config, t, base, offsets, tol=1e-6):
    """Distance along the all-ones diagonal from the zero-sum plane to the
    domain boundary.

    For ``y`` with ``sum(y) = 0`` returns ``r(y) = inf{s : (t, y + s*1)``
    in the domain``}`` located by bisection to ``tol``.  The map
    ``y -> y + r(y) 1`` parameterizes the boundary; ``r`` is 1-Lipschitz
    in the max norm for the continuous fields.
    """
    base = np.asarray(base, dtype=float)
    results = []
    hi_bounds = np.array(field.grid_for(config).spec.space_max)
    for off in offsets:
        y = base + np.asarray(off, dtype=float)
        if abs(y.sum()) > 1e-9 * max(1.0, float(np.abs(y).max())):
            raise ValueError(f"offset point {y} is not in the zero-sum plane")
        s_lo = -float(y.max()) - 1e-9           # a coordinate <= 0 => outside
        s_hi = float(np.max(field.network.row_sum_max - y)) + 1e-9
        if np.any(y + s_hi > hi_bounds + 1e-9) or not domain_contains(
                field, config, t, y + s_hi):
            raise BracketNotFound(
                f"diagonal ray from {y} does not enter the domain within the grid"
            )
        lo, hi = s_lo, s_hi
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if domain_contains(field, config, t, y + mid):
                hi = mid
            else:
                lo = mid
        results.append(0.5 * (lo + hi))
    return results
