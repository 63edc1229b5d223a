"""Exact discrete-time, discrete-space analogue of the particle system.

Each particle walks +-sigma*sqrt(dt) per step, all 2^N joint moves
equally likely.  An iterate assigns every state (time step k, joint
position x, already-hit flags h) the conditional probability of each
particle being absorbed by the horizon, where absorption means crossing
the threshold built from the previous iterate's values.  The map from
one iterate to the next is monotone, so iterating from the constant-one
field walks down to the greatest fixed point in finitely many steps
(the state space is finite and hit times can only move so many times).

Positions are always computed as ``anchor + offset * step`` with integer
offsets, so a system restarted from an interior node reproduces the
original node positions bit for bit; the flow-property check relies on
this.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import MaxIterExceeded, ShapeMismatch, StateSpaceExceeded
from .grids import weighted_row_sum
from .system import IndexSet
from .cascade import resolve_states

DEFAULT_BUDGET = 50_000_000  # total stored floats across layers


@dataclass(frozen=True)
class LatticeSpec:
    """Time-step count, initial data, and the integer position anchor."""

    params: object
    time_steps: int
    initial: object  # InitialData
    dt: float = None
    anchor_states: np.ndarray = None
    anchor_offsets: np.ndarray = None

    def __post_init__(self):
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        if self.dt is None:
            object.__setattr__(
                self, "dt",
                (self.params.horizon - self.initial.start_time) / self.time_steps)
        if self.anchor_states is None:
            object.__setattr__(self, "anchor_states",
                               np.asarray(self.initial.initial_states, dtype=float))
        if self.anchor_offsets is None:
            object.__setattr__(self, "anchor_offsets",
                               np.zeros(self.params.n_particles, dtype=np.int64))

    @property
    def step(self):
        return self.params.sigma * np.sqrt(self.dt)

    def axis_positions(self, i, k):
        """Positions of particle ``i`` (1-based) at layer ``k``."""
        off = self.anchor_offsets[i - 1] + 2 * np.arange(k + 1) - k
        return self.anchor_states[i - 1] + off * self.step

    def state_count(self):
        n = self.params.n_particles
        return sum((k + 1) ** n for k in range(self.time_steps + 1)) * 2**n * n

    def time_at(self, k):
        return self.initial.start_time + k * self.dt


@dataclass(frozen=True)
class LatticeField:
    """Per-layer value arrays ``values[k][m_1..m_N, flag_mask, particle]``."""

    spec: LatticeSpec
    values: list

    def layer_shape(self, k):
        n = self.spec.params.n_particles
        return (k + 1,) * n + (2**n, n)

    def pointwise_le(self, other):
        return all(np.all(a <= b) for a, b in zip(self.values, other.values))

    def equals(self, other):
        return all(np.array_equal(a, b) for a, b in zip(self.values, other.values))

    def sup_abs_diff(self, other):
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.values, other.values))


@dataclass(frozen=True)
class IterationReport:
    """Outcome of a monotone iteration run."""

    iterations_used: int
    sup_decrements: list
    converged: bool
    fixed_point: LatticeField
    monotone_nonincreasing: bool
    monotone_nondecreasing: bool
    start_flags: int
    start_values: np.ndarray
    experimental: bool = False


def constant_field(spec, value):
    n = spec.params.n_particles
    vals = [np.full((k + 1,) * n + (2**n, n), float(value))
            for k in range(spec.time_steps + 1)]
    return LatticeField(spec, vals)


def _check_budget(spec, budget):
    if spec.state_count() > budget:
        raise StateSpaceExceeded(
            f"lattice needs {spec.state_count()} stored values; budget {budget}"
        )


def _flag_bits(mask, n):
    return [(mask >> i) & 1 for i in range(n)]


def _layer_thresholds(spec, D, layer_vals, hm):
    """Thresholds per particle on one layer for one flag mask."""
    n = spec.params.n_particles
    Y = layer_vals[..., hm, :]
    return [weighted_row_sum(D[i], [Y[..., l] for l in range(n)]) for i in range(n)]


def _updated_masks(spec, D, layer_vals, k_next, hm):
    """Flag masks after the hit check at layer ``k_next`` given pre-update
    flags ``hm``; thresholds use the supplied (previous-iterate) values."""
    n = spec.params.n_particles
    thr = _layer_thresholds(spec, D, layer_vals, hm)
    shape = (k_next + 1,) * n
    newmask = np.full(shape, hm, dtype=np.int64)
    bits = _flag_bits(hm, n)
    for i in range(n):
        if bits[i]:
            continue
        pos = spec.axis_positions(i + 1, k_next)
        pshape = [1] * n
        pshape[i] = k_next + 1
        dead = pos.reshape(pshape) <= thr[i]
        newmask |= dead.astype(np.int64) << i
    return newmask


def psi_map(spec, D_matrix, prev, budget=DEFAULT_BUDGET):
    """One application of the monotone map: hit times from ``prev``'s
    thresholds, then exact backward induction of the conditional
    absorption probabilities.

    Pure dynamic programming over (layer, position, flags); no sampling.
    """
    _check_budget(spec, budget)
    n = spec.params.n_particles
    D = np.asarray(D_matrix.entries if hasattr(D_matrix, "entries") else D_matrix,
                   dtype=float)
    M = spec.time_steps
    values = [None] * (M + 1)
    term = np.empty((M + 1,) * n + (2**n, n))
    for hm in range(2**n):
        for j in range(n):
            term[..., hm, j] = float((hm >> j) & 1)
    values[M] = term
    for k in range(M - 1, -1, -1):
        out = np.zeros((k + 1,) * n + (2**n, n))
        nxt = values[k + 1]
        for hm in range(2**n):
            newmask = _updated_masks(spec, D, prev.values[k + 1], k + 1, hm)
            gathered = np.empty((k + 2,) * n + (n,))
            for j in range(n):
                gathered[..., j] = np.take_along_axis(
                    nxt[..., j], newmask[..., None], axis=-1)[..., 0]
            acc = None
            for move in range(2**n):
                sl = tuple(slice((move >> i) & 1, ((move >> i) & 1) + k + 1)
                           for i in range(n))
                win = gathered[sl]
                acc = win.copy() if acc is None else acc + win
            out[(Ellipsis, hm, slice(None))] = acc / 2**n
        values[k] = out
    return LatticeField(spec, values)


def initial_mask(spec):
    """Flags of the particles removed by the initial data (not alive)."""
    n = spec.params.n_particles
    chi = spec.initial.alive_set
    mask = 0
    for i in range(1, n + 1):
        if i not in chi:
            mask |= 1 << (i - 1)
    return mask


def start_mask_update(spec, D_matrix, threshold_field, prev_mask):
    """Hit check at the start node.

    This iteration's stopping rule evaluates the previous iterate at the
    flags the previous iteration produced at the start node; tracking
    that one mask across iterations keeps the start values faithful to
    the process-level construction even when the start node itself is
    absorbed (its zero-flag function values are then unreachable
    artifacts and must not leak into the reported solution).
    """
    n = spec.params.n_particles
    D = np.asarray(D_matrix.entries if hasattr(D_matrix, "entries") else D_matrix,
                   dtype=float)
    chi = spec.initial.alive_set
    base = initial_mask(spec)
    origin = (0,) * n
    Y0 = threshold_field.values[0][origin + (int(prev_mask) | base, slice(None))]
    mask = base
    for i in range(1, n + 1):
        if i in chi:
            thr = float(weighted_row_sum(D[i - 1], [Y0[l] for l in range(n)]))
            pos = float(spec.axis_positions(i, 0)[0])
            if pos <= thr:
                mask |= 1 << (i - 1)
    return mask


def _run_iteration(spec, D_matrix, start_value, max_iter, budget, experimental):
    origin = (0,) * spec.params.n_particles
    prev = constant_field(spec, start_value)
    prev_mask = start_mask_update(spec, D_matrix, prev, initial_mask(spec))
    sup_decrements = []
    nonincreasing = True
    nondecreasing = True
    for n_iter in range(1, max_iter + 1):
        new = psi_map(spec, D_matrix, prev, budget=budget)
        new_mask = start_mask_update(spec, D_matrix, new, prev_mask)
        nonincreasing &= new.pointwise_le(prev)
        nondecreasing &= prev.pointwise_le(new)
        sup_decrements.append(new.sup_abs_diff(prev))
        if new.equals(prev) and new_mask == prev_mask:
            y0 = new.values[0][origin + (new_mask, slice(None))].copy()
            return IterationReport(
                iterations_used=n_iter,
                sup_decrements=sup_decrements,
                converged=True,
                fixed_point=new,
                monotone_nonincreasing=nonincreasing,
                monotone_nondecreasing=nondecreasing,
                start_flags=new_mask,
                start_values=y0,
                experimental=experimental,
            )
        prev, prev_mask = new, new_mask
    partial = IterationReport(
        iterations_used=max_iter,
        sup_decrements=sup_decrements,
        converged=False,
        fixed_point=prev,
        monotone_nonincreasing=nonincreasing,
        monotone_nondecreasing=nondecreasing,
        start_flags=prev_mask,
        start_values=prev.values[0][origin + (prev_mask, slice(None))].copy(),
        experimental=experimental,
    )
    raise MaxIterExceeded(f"no exact fixed point within {max_iter} iterations",
                          report=partial)


def tarski_from_above(spec, D_matrix, max_iter=64, budget=DEFAULT_BUDGET):
    """Iterate the monotone map from the constant-one field down to the
    greatest fixed point; exact convergence on the finite lattice."""
    return _run_iteration(spec, D_matrix, 1.0, max_iter, budget, experimental=False)


def iterate_from_below(spec, D_matrix, max_iter=64, budget=DEFAULT_BUDGET):
    """Iterate from the constant-zero field.

    Experimental: unlike the from-above sweep, the limit is not known to
    solve the system even when a fixed point is reached, so the report
    only records what happened.
    """
    return _run_iteration(spec, D_matrix, 0.0, max_iter, budget, experimental=True)


def verify_tower(spec, D_matrix, threshold_field, value_field):
    """Independent re-check of the one-step conditional-expectation
    identity at every node; returns the maximal absolute residual.

    Recomputes the move average in reverse order so float rounding is
    exercised differently from the forward construction.
    """
    n = spec.params.n_particles
    D = np.asarray(D_matrix.entries if hasattr(D_matrix, "entries") else D_matrix,
                   dtype=float)
    worst = 0.0
    for k in range(spec.time_steps - 1, -1, -1):
        nxt = value_field.values[k + 1]
        for hm in range(2**n):
            newmask = _updated_masks(spec, D, threshold_field.values[k + 1], k + 1, hm)
            gathered = np.empty((k + 2,) * n + (n,))
            for j in range(n):
                gathered[..., j] = np.take_along_axis(
                    nxt[..., j], newmask[..., None], axis=-1)[..., 0]
            acc = None
            for move in range(2**n - 1, -1, -1):
                sl = tuple(slice((move >> i) & 1, ((move >> i) & 1) + k + 1)
                           for i in range(n))
                win = gathered[sl]
                acc = win.copy() if acc is None else acc + win
            resid = np.max(np.abs(value_field.values[k][..., hm, :] - acc / 2**n))
            worst = max(worst, float(resid))
    return worst


def compare_to_cascade(fixed_point, field, max_time_index=None):
    """Greatest lattice solution against the continuous-field family.

    Compares at all-alive-flag nodes that are consistent with their own
    thresholds (a node below its threshold cannot carry zero flags), over
    time layers ``k <= max_time_index`` (default ``M // 2``: against the
    horizon the lattice walk's crossing error grows like
    sqrt(dt / (T - t)) and swamps the comparison).

    Returns ``(max_abs_diff, location)`` with location a dict.
    """
    spec = fixed_point.spec
    params = spec.params
    n = params.n_particles
    if field.params.n_particles != n or field.params.sigma != params.sigma \
            or field.params.horizon != params.horizon:
        raise ShapeMismatch("lattice and field system parameters differ")
    if spec.initial.alive_set != IndexSet.full(n):
        raise ShapeMismatch("comparison requires the full alive set")
    D = field.network.entries
    kmax = spec.time_steps // 2 if max_time_index is None else max_time_index
    full = IndexSet.full(n)
    worst = 0.0
    where = None
    for k in range(kmax + 1):
        layer = fixed_point.values[k]
        Y0 = layer[..., 0, :]
        axes_pos = [spec.axis_positions(i, k) for i in range(1, n + 1)]
        mesh = np.meshgrid(*axes_pos, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        lat_vals = Y0.reshape(-1, n)
        consistent = np.ones(pts.shape[0], dtype=bool)
        for i in range(n):
            thr = weighted_row_sum(D[i], [lat_vals[:, l] for l in range(n)])
            consistent &= pts[:, i] > thr
        if not consistent.any():
            continue
        t_k = spec.time_at(k)
        cont_vals, cont_alive = resolve_states(field, full, t_k, pts[consistent])
        # compare only where the field also keeps the full set alive: on the
        # boundary the field evaluates a reduced configuration, which is a
        # different conditional object than the all-alive lattice node
        both = cont_alive.all(axis=1)
        if not both.any():
            continue
        consistent[np.nonzero(consistent)[0][~both]] = False
        cont_vals = cont_vals[both]
        diff = np.abs(lat_vals[consistent] - cont_vals)
        j = int(np.argmax(diff))
        if diff.flat[j] > worst:
            worst = float(diff.flat[j])
            row, col = divmod(j, n)
            where = {
                "k": k,
                "t": t_k,
                "x": pts[consistent][row].copy(),
                "particle": col + 1,
            }
    return worst, where


def restart_check(spec, D_matrix, report, restart_k, node, flags_mask=None,
                  max_iter=64, budget=DEFAULT_BUDGET):
    """Flow property: rerun the from-above iteration from an interior node.

    ``node`` is the multi-index of the layer-``restart_k`` position;
    ``flags_mask`` the already-hit flags there (default all alive).  The
    restarted greatest solution must reproduce the original values at
    every overlapping later node exactly (same integer position anchors,
    same thresholds).  Returns the maximal absolute deviation.
    """
    from .system import InitialData

    n = spec.params.n_particles
    node = tuple(node)
    flags_mask = 0 if flags_mask is None else int(flags_mask)
    offsets = spec.anchor_offsets + 2 * np.asarray(node, dtype=np.int64) - restart_k
    states = np.array([spec.anchor_states[i] + offsets[i] * spec.step
                       for i in range(n)])
    chi = IndexSet([i for i in range(1, n + 1) if not (flags_mask >> (i - 1)) & 1])
    sub = LatticeSpec(
        params=spec.params,
        time_steps=spec.time_steps - restart_k,
        initial=InitialData(spec.time_at(restart_k), states, chi),
        dt=spec.dt,
        anchor_states=spec.anchor_states,
        anchor_offsets=offsets,
    )
    sub_report = tarski_from_above(sub, D_matrix, max_iter=max_iter, budget=budget)
    worst = 0.0
    for kk in range(sub.time_steps + 1):
        sub_layer = sub_report.fixed_point.values[kk]
        orig_layer = report.fixed_point.values[restart_k + kk]
        base = tuple(np.asarray(node, dtype=np.int64))
        for hm in range(2**n):
            if hm & flags_mask != flags_mask:
                continue  # unreachable from the restart node
            idx = tuple(
                slice(base[i], base[i] + kk + 1) for i in range(n)
            ) + (hm, slice(None))
            worst = max(worst, float(np.max(np.abs(
                sub_layer[..., hm, :] - orig_layer[idx]))))
    return worst
