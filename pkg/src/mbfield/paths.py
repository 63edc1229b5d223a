"""Continuous-time Monte Carlo of the killed particle system driven by a
built field family.

Per path and per grid time, the scan resolves the killing cascade for
the current alive configuration (removing the minimal dead index,
repeatedly within the step), records every particle's conditional
killing probability from the resolved configuration, and the boundary
processes sum_j D_ij Y^j.  Because the kill rule, the recorded values,
and the capital processes all flow through the same fixed-order
arithmetic, the recorded killing times coincide exactly with the first
grid crossing of the capital below zero.

Positions are generated blockwise from counter-based per-chunk streams:
``X[k] = carry + cumsum(increments)`` inside fixed 1024-step blocks of
fixed 4096-path chunks, so any worker count reproduces the same paths
bit for bit.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .cascade import resolve_states
from .errors import BumpTooLargeForGrid, FieldNotBuilt
from .grids import weighted_row_sum
from .rng import CHUNK, IncrementSource, chunk_ranges
from .system import IndexSet, validate_initial_data

_BLOCK_STEPS = 1024


@dataclass(frozen=True)
class PathConfig:
    """Time step, path count, stream seed, and initial data for one run."""

    dt: float
    n_paths: int
    seed: int
    initial: object  # InitialData

    def __post_init__(self):
        if self.dt <= 0.0 or self.n_paths < 1:
            raise ValueError("dt must be positive and n_paths >= 1")

    def step_count(self, horizon):
        span = horizon - self.initial.start_time
        steps = int(round(span / self.dt))
        if steps < 1 or abs(steps * self.dt - span) > 1e-12:
            raise ValueError(
                f"dt={self.dt} does not divide the remaining horizon {span}"
            )
        return steps


@dataclass(frozen=True)
class KillingRecord:
    """Ordered removal times rho_n, surviving index sets, per-particle taus."""

    times: tuple
    index_sets: tuple
    taus: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """One simulated path with its recorded processes."""

    times: np.ndarray
    states: np.ndarray        # (steps+1, N)
    alive_masks: np.ndarray   # packed bitmask per step, after the step's kills
    Y: np.ndarray             # (steps+1, N)
    boundary: np.ndarray      # (steps+1, N): sum_j D_ij Y^j
    killing: KillingRecord
    Z: np.ndarray = None      # optional (steps+1, N, N), see z_process


@dataclass(frozen=True)
class PathSummary:
    """Checkpoint view of a large run: Y at start, midpoint, horizon."""

    checkpoint_times: tuple
    Y0: np.ndarray
    Ymid: np.ndarray
    YT: np.ndarray
    taus: np.ndarray
    n_paths: int


def _require_complete(field):
    if not field.is_complete():
        raise FieldNotBuilt("decoupling field is missing configuration levels")


def _pack_alive(alive_bool):
    n = alive_bool.shape[-1]
    weights = (1 << np.arange(n)).astype(np.int64)
    return alive_bool.astype(np.int64) @ weights


def _position_blocks(src, chunk_idx, n_in_chunk, start_states, scale):
    """Yield (k_lo, k_hi, positions) with positions for steps k_lo+1..k_hi.

    Blockwise carry + cumsum is the definition of the path positions;
    every consumer sees identical floats.
    """
    carry = np.tile(start_states, (n_in_chunk, 1))
    for lo, hi, normals in src.chunk_blocks(chunk_idx, n_in_chunk):
        block = carry[:, None, :] + np.cumsum(normals * scale, axis=1)
        yield lo, hi, block
        carry = block[:, -1, :].copy()


def _scan_positions(field, chi_mask, times, X, taus_out=None, events_out=None):
    """Full scan of precomputed positions ``X`` (n, steps+1, N).

    Returns (Y, boundary, alive_masks); fills per-particle kill times and
    removal events when arrays are supplied.  Removal events are
    ``(step_index, path_ids, order, member)`` with pre-start removals of
    non-members of chi at order -1.
    """
    params, D = field.params, field.network.entries
    n_paths, n_times, n = X.shape
    Y = np.empty((n_paths, n_times, n))
    boundary = np.empty((n_paths, n_times, n))
    alive_masks = np.empty((n_paths, n_times), dtype=np.int64)
    if taus_out is None:
        taus_out = np.full((n_paths, n), np.inf)
    full_mask = (1 << n) - 1
    if events_out is not None and chi_mask != full_mask:
        for i in range(1, n + 1):
            if not (chi_mask >> (i - 1)) & 1:
                events_out.append((0, np.arange(n_paths), -1, i))
    for i in range(1, n + 1):
        if not (chi_mask >> (i - 1)) & 1:
            taus_out[:, i - 1] = times[0]
    current = np.full(n_paths, chi_mask, dtype=np.int64)
    for k in range(n_times):
        t = float(times[k])
        for mask in np.unique(current):
            rows = np.nonzero(current == mask)[0]
            config = IndexSet.from_mask(int(mask))
            step_events = []
            pts = X[rows[:, None], k, config.indices0[None, :]] if len(config) \
                else np.zeros((rows.size, 0))
            values, alive = resolve_states(field, config, t, pts,
                                           events=step_events, point_ids=rows)
            Y[rows, k] = values
            for i in range(n):
                boundary[rows, k, i] = weighted_row_sum(
                    D[i], [values[:, j] for j in range(n)])
            new_mask = _pack_alive(alive)
            current[rows] = new_mask
            for ids, depth, member in step_events:
                taus_out[ids, member - 1] = t
                if events_out is not None:
                    events_out.append((k, ids, depth, member))
        alive_masks[:, k] = current
    return Y, boundary, alive_masks


def _killing_record(n, times, taus, path_events):
    """Assemble the removal sequence for one path."""
    order = sorted(path_events, key=lambda e: (e[0], e[1], e[2]))
    rho, sets = [], []
    current = IndexSet.full(n)
    for k, depth, member in order:
        rho.append(float(times[k]))
        current = current.remove(member)
        sets.append(current)
    return KillingRecord(tuple(rho), tuple(sets), taus)


def simulate_paths(field, cfg, record="full", threads=1):
    """Simulate the killed particle system along the field family.

    ``record='full'`` returns a list of :class:`Trajectory`;
    ``record='summary'`` returns a :class:`PathSummary` holding Y at the
    start, midpoint, and horizon plus all kill times, which is what the
    large-sample diagnostics need without storing every step.
    """
    _require_complete(field)
    params = field.params
    validate_initial_data(params, cfg.initial)
    steps = cfg.step_count(params.horizon)
    times = np.linspace(cfg.initial.start_time, params.horizon, steps + 1)
    if record == "full":
        return _simulate_full(field, cfg, times, threads)
    if record == "summary":
        return _simulate_summary(field, cfg, times, threads)
    raise ValueError(f"unknown record mode {record!r}")


def _chunk_positions(field, cfg, times, chunk_idx, lo, hi):
    params = field.params
    n = params.n_particles
    steps = len(times) - 1
    scale = params.sigma * np.sqrt(cfg.dt)
    src = IncrementSource(cfg.seed, 0, n, steps, block_steps=_BLOCK_STEPS)
    X = np.empty((hi - lo, steps + 1, n))
    X[:, 0, :] = cfg.initial.initial_states
    for k_lo, k_hi, block in _position_blocks(
            src, chunk_idx, hi - lo, cfg.initial.initial_states, scale):
        X[:, k_lo + 1:k_hi + 1, :] = block
    return X


def _simulate_full(field, cfg, times, threads):
    n = field.params.n_particles
    chi_mask = cfg.initial.alive_set.mask
    chunks = chunk_ranges(cfg.n_paths)

    def run_chunk(args):
        ci, (lo, hi) = args
        X = _chunk_positions(field, cfg, times, ci, lo, hi)
        taus = np.full((hi - lo, n), np.inf)
        events = []
        Y, boundary, alive = _scan_positions(field, chi_mask, times, X,
                                             taus_out=taus, events_out=events)
        return lo, X, Y, boundary, alive, taus, events

    results = _map_chunks(run_chunk, list(enumerate(chunks)), threads)
    trajectories = []
    for lo, X, Y, boundary, alive, taus, events in results:
        per_path = [[] for _ in range(X.shape[0])]
        for k, ids, depth, member in events:
            for pid in ids:
                per_path[pid].append((k, depth, member))
        for p in range(X.shape[0]):
            killing = _killing_record(n, times, taus[p], per_path[p])
            trajectories.append(Trajectory(
                times=times,
                states=X[p],
                alive_masks=alive[p],
                Y=Y[p],
                boundary=boundary[p],
                killing=killing,
            ))
    return trajectories


def _simulate_summary(field, cfg, times, threads):
    params = field.params
    n = params.n_particles
    steps = len(times) - 1
    checkpoints = (0, steps // 2, steps)
    D = field.network.entries
    decoupled = np.all(D * (1.0 - np.eye(n)) == 0.0)
    chunks = chunk_ranges(cfg.n_paths)

    def run_chunk(args):
        ci, (lo, hi) = args
        if decoupled:
            return lo, _summary_chunk_decoupled(field, cfg, times, ci, lo, hi,
                                                checkpoints)
        return lo, _summary_chunk_generic(field, cfg, times, ci, lo, hi,
                                          checkpoints)

    results = _map_chunks(run_chunk, list(enumerate(chunks)), threads)
    Y0 = np.concatenate([r[1][0] for r in results])
    Ymid = np.concatenate([r[1][1] for r in results])
    YT = np.concatenate([r[1][2] for r in results])
    taus = np.concatenate([r[1][3] for r in results])
    return PathSummary(
        checkpoint_times=tuple(float(times[c]) for c in checkpoints),
        Y0=Y0, Ymid=Ymid, YT=YT, taus=taus, n_paths=cfg.n_paths,
    )


def _summary_chunk_decoupled(field, cfg, times, chunk_idx, lo, hi, checkpoints):
    """Fast sweep when the network has no off-diagonal weights.

    Thresholds are then the constant row sums in every configuration, so
    particles decouple and kills reduce to constant-barrier crossings.
    The crossing decisions equal the generic resolver's: the fixed-order
    weighted sums coincide term for term.
    """
    params = field.params
    n = params.n_particles
    steps = len(times) - 1
    scale = params.sigma * np.sqrt(cfg.dt)
    n_chunk = hi - lo
    D = field.network.entries
    thr = np.array([weighted_row_sum(D[i], [1.0] * n) for i in range(n)])
    taus = np.full((n_chunk, n), np.inf)
    start = float(times[0])
    chi = cfg.initial.alive_set
    for i in range(1, n + 1):
        if i not in chi:
            taus[:, i - 1] = start
        elif cfg.initial.initial_states[i - 1] <= thr[i - 1]:
            taus[:, i - 1] = start
    snapshots = {0: np.tile(cfg.initial.initial_states, (n_chunk, 1))}
    src = IncrementSource(cfg.seed, 0, n, steps, block_steps=_BLOCK_STEPS)
    alive = np.isinf(taus)
    for k_lo, k_hi, block in _position_blocks(
            src, chunk_idx, n_chunk, cfg.initial.initial_states, scale):
        for i in range(n):
            rows = np.nonzero(alive[:, i])[0]
            if rows.size == 0:
                continue
            below = block[rows, :, i] <= thr[i]
            hit_any = below.any(axis=1)
            hit_rows = rows[hit_any]
            first = np.argmax(below[hit_any], axis=1)
            taus[hit_rows, i] = times[k_lo + 1 + first]
            alive[hit_rows, i] = False
        for c in checkpoints:
            if k_lo + 1 <= c <= k_hi:
                snapshots[c] = block[:, c - k_lo - 1, :].copy()
    out = []
    for c in checkpoints[:2]:
        t_c = float(times[c])
        Yc = np.empty((n_chunk, n))
        alive_c = taus > t_c
        for mask in np.unique(_pack_alive(alive_c)):
            rows = np.nonzero(_pack_alive(alive_c) == mask)[0]
            config = IndexSet.from_mask(int(mask))
            pts = snapshots[c][rows[:, None], config.indices0[None, :]] if len(config) \
                else np.zeros((rows.size, 0))
            values, _ = resolve_states(field, config, t_c, pts)
            Yc[rows] = values
        out.append(Yc)
    YT = (taus <= times[-1]).astype(float)
    out.append(YT)
    out.append(taus)
    return out


def _summary_chunk_generic(field, cfg, times, chunk_idx, lo, hi, checkpoints):
    params = field.params
    n = params.n_particles
    steps = len(times) - 1
    scale = params.sigma * np.sqrt(cfg.dt)
    n_chunk = hi - lo
    src = IncrementSource(cfg.seed, 0, n, steps, block_steps=_BLOCK_STEPS)
    taus = np.full((n_chunk, n), np.inf)
    chi_mask = cfg.initial.alive_set.mask
    for i in range(1, n + 1):
        if not (chi_mask >> (i - 1)) & 1:
            taus[:, i - 1] = times[0]
    current = np.full(n_chunk, chi_mask, dtype=np.int64)
    pos = np.tile(cfg.initial.initial_states, (n_chunk, 1))
    Y_checks = {}

    def step_resolve(k, positions):
        t = float(times[k])
        values_all = np.empty((n_chunk, n))
        for mask in np.unique(current):
            rows = np.nonzero(current == mask)[0]
            config = IndexSet.from_mask(int(mask))
            ev = []
            pts = positions[rows[:, None], config.indices0[None, :]] if len(config) \
                else np.zeros((rows.size, 0))
            values, alive = resolve_states(field, config, t, pts,
                                           events=ev, point_ids=rows)
            values_all[rows] = values
            current[rows] = _pack_alive(alive)
            for ids, depth, member in ev:
                taus[ids, member - 1] = t
        return values_all

    vals = step_resolve(0, pos)
    if 0 in checkpoints:
        Y_checks[0] = vals.copy()
    for k_lo, k_hi, block in _position_blocks(
            src, chunk_idx, n_chunk, cfg.initial.initial_states, scale):
        for k in range(k_lo + 1, k_hi + 1):
            pos = block[:, k - k_lo - 1, :]
            vals = step_resolve(k, pos)
            if k in checkpoints and k != steps:
                Y_checks[k] = vals.copy()
    YT = (taus <= times[-1]).astype(float)
    return [Y_checks[checkpoints[0]], Y_checks[checkpoints[1]], YT, taus]


def _map_chunks(fn, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# diagnostics


def default_bump(field):
    """Twice the coarsest grid spacing: central differences any finer
    cannot resolve the stored field."""
    worst = 0.0
    for grid in field.grids.values():
        for a in grid.spec.axes:
            worst = max(worst, float(a[1] - a[0]))
    return 2.0 * worst


def z_process(field, traj, bump=None):
    """Volatility loadings by central differences of the field in the
    alive coordinates; dY = Z . dW fixes the sign.

    Entries for particles outside the alive set vanish.  The horizon row
    is left at zero (the field there is an indicator).
    """
    params = field.params
    n = params.n_particles
    if bump is None:
        bump = default_bump(field)
    spacing = max(float(a[1] - a[0]) for g in field.grids.values()
                  for a in g.spec.axes) if field.grids else 0.0
    if bump < spacing:
        raise BumpTooLargeForGrid(
            f"bump {bump} is below the grid spacing {spacing}"
        )
    n_times = len(traj.times)
    Z = np.zeros((n_times, n, n))
    for k in range(n_times - 1):
        t = float(traj.times[k])
        mask = int(traj.alive_masks[k])
        config = IndexSet.from_mask(mask)
        if len(config) == 0:
            continue
        x = traj.states[k][config.indices0]
        for cj, j in enumerate(config.members):
            up = x.copy()
            dn = x.copy()
            up[cj] += bump
            dn[cj] -= bump
            v_up, _ = resolve_states(field, config, t, up[None, :])
            v_dn, _ = resolve_states(field, config, t, dn[None, :])
            Z[k, :, j - 1] = params.sigma * (v_up[0] - v_dn[0]) / (2.0 * bump)
        for i in range(1, n + 1):
            if i not in config:
                Z[k, i - 1, :] = 0.0
    return Z


@dataclass(frozen=True)
class MartingaleReport:
    """Per-particle martingale and terminal diagnostics."""

    n_paths: int
    mean_increment: np.ndarray      # mean(Y_T - Y_0)
    se_increment: np.ndarray
    mean_half_increment: np.ndarray  # mean(Y_mid - Y_0)
    se_half_increment: np.ndarray
    mean_y0: np.ndarray
    kill_fraction: np.ndarray
    se_kill_fraction: np.ndarray
    degenerate: bool                 # single path: standard errors undefined


def _summary_arrays(trajs_or_summary):
    if isinstance(trajs_or_summary, PathSummary):
        s = trajs_or_summary
        return s.Y0, s.Ymid, s.YT, s.taus, s.checkpoint_times
    trajs = list(trajs_or_summary)
    times = trajs[0].times
    mid = (len(times) - 1) // 2
    Y0 = np.stack([tr.Y[0] for tr in trajs])
    Ymid = np.stack([tr.Y[mid] for tr in trajs])
    YT = np.stack([tr.Y[-1] for tr in trajs])
    taus = np.stack([tr.killing.taus for tr in trajs])
    return Y0, Ymid, YT, taus, (times[0], times[mid], times[-1])


def martingale_diagnostics(trajs_or_summary):
    """Sample means and standard errors of the martingale increments and
    the predicted-versus-realized kill fractions."""
    Y0, Ymid, YT, taus, cts = _summary_arrays(trajs_or_summary)
    n_paths = Y0.shape[0]
    degenerate = n_paths < 2
    horizon = cts[-1]

    def mean_se(arr):
        m = arr.mean(axis=0)
        if degenerate:
            return m, np.full(arr.shape[1], np.inf)
        sd = arr.std(axis=0, ddof=1)
        return m, sd / np.sqrt(n_paths)

    inc, se_inc = mean_se(YT - Y0)
    half, se_half = mean_se(Ymid - Y0)
    killed = (taus <= horizon).astype(float)
    kf, se_kf = mean_se(killed)
    return MartingaleReport(
        n_paths=n_paths,
        mean_increment=inc,
        se_increment=se_inc,
        mean_half_increment=half,
        se_half_increment=se_half,
        mean_y0=Y0.mean(axis=0),
        kill_fraction=kf,
        se_kill_fraction=se_kf,
        degenerate=degenerate,
    )


def terminal_identity_holds(trajs_or_summary):
    """Exact check Y_T == indicator(tau <= T) on every path."""
    _, _, YT, taus, cts = _summary_arrays(trajs_or_summary)
    return bool(np.all(YT == (taus <= cts[-1]).astype(float)))


def flow_property_check(field, traj, restart_k, alive_set=None):
    """Re-run the killing scan from step ``restart_k`` with the recorded
    state and the same positions; returns the max |Y| deviation at the
    later steps.

    Passing ``alive_set`` overrides the recorded alive configuration
    (deliberate fault injection makes the check's sensitivity visible).
    """
    if not 0 <= restart_k < len(traj.times):
        raise ValueError("restart_k outside the trajectory grid")
    mask = int(traj.alive_masks[restart_k]) if alive_set is None else alive_set.mask
    X = traj.states[restart_k:][None, ...]
    times = traj.times[restart_k:]
    Y, _, _ = _scan_positions(field, mask, times, X)
    return float(np.max(np.abs(Y[0] - traj.Y[restart_k:])))
