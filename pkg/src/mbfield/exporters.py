"""CSV and manifest writers.

All numeric output is formatted to 9 significant digits, which
round-trips below every test tolerance, and writing is single-threaded
so byte-identical reruns only require deterministic inputs.
"""

import hashlib
import json
import sys
import time

import numpy as np

from .cascade import boundary_profile, resolve_states
from .errors import BracketNotFound, DimensionUnsupported
from .system import IndexSet


def fmt(x):
    return f"{float(x):.9g}"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    return path


def export_heatmap(field, config, t, which, path, polyline_points=129):
    """Grid CSV of one level's values at time ``t``.

    Two-member configurations produce a heatmap with header
    ``t,x1,x2,i,value`` (row-major over the grid) and a companion
    ``*_boundary.csv`` polyline from diagonal boundary sweeps; single
    members produce a curve with header ``t,x1,i,value``.  With
    ``which='total'`` the value is the sum over all N particles (dead
    ones contribute 1) and the ``i`` column holds 0.
    """
    if which not in ("total", "per-particle"):
        raise ValueError(f"unknown heatmap mode {which!r}")
    d = len(config)
    if d not in (1, 2):
        raise DimensionUnsupported("heatmaps need |I| = 2 and curves |I| = 1")
    spec = field.grid_for(config).spec
    n = field.params.n_particles
    mesh = np.meshgrid(*spec.axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    values, _ = resolve_states(field, config, t, pts)
    coord_names = [f"x{k + 1}" for k in range(d)]
    rows = []
    if which == "total":
        total = values.sum(axis=1)
        for p, v in zip(pts, total):
            rows.append([fmt(t)] + [fmt(c) for c in p] + ["0", fmt(v)])
    else:
        for i in config.members:
            for p, v in zip(pts, values[:, i - 1]):
                rows.append([fmt(t)] + [fmt(c) for c in p] + [str(i), fmt(v)])
    _write_rows(path, ["t"] + coord_names + ["i", "value"], rows)
    written = [path]
    if d == 2:
        written.append(_export_boundary_polyline(
            field, config, t, _sibling(path, "_boundary"), polyline_points))
    return written


def _sibling(path, suffix):
    base, dot, ext = str(path).rpartition(".")
    return f"{base}{suffix}.{ext}" if dot else f"{path}{suffix}"


def _export_boundary_polyline(field, config, t, path, n_points):
    spec = field.grid_for(config).spec
    span = 0.5 * min(hi - lo for lo, hi in zip(spec.space_min, spec.space_max))
    rows = []
    for u in np.linspace(-span, span, n_points):
        y = np.array([u, -u])
        try:
            (r,) = boundary_profile(field, config, t, y, [np.zeros(2)])
        except BracketNotFound:
            continue
        point = y + r
        rows.append([fmt(point[0]), fmt(point[1])])
    return _write_rows(path, ["x1", "x2"], rows)


def export_curves(field, config, times, path, which="total"):
    """Single-member level curves at several times in one CSV."""
    if len(config) != 1:
        raise DimensionUnsupported("curves need |I| = 1")
    written = []
    spec = field.grid_for(config).spec
    rows = []
    for t in times:
        pts = spec.axes[0][:, None]
        values, _ = resolve_states(field, config, t, pts)
        if which == "total":
            vals = values.sum(axis=1)
            for x, v in zip(spec.axes[0], vals):
                rows.append([fmt(t), fmt(x), "0", fmt(v)])
        else:
            (i,) = config.members
            for x, v in zip(spec.axes[0], values[:, i - 1]):
                rows.append([fmt(t), fmt(x), str(i), fmt(v)])
    return _write_rows(path, ["t", "x1", "i", "value"], rows)


def export_trajectories(trajs, path):
    """`path_id,k,t,x_1..x_N,alive_bits,y_1..y_N,b_1..b_N` per grid step."""
    n = trajs[0].states.shape[1]
    header = (["path_id", "k", "t"] + [f"x_{i + 1}" for i in range(n)]
              + ["alive_bits"] + [f"y_{i + 1}" for i in range(n)]
              + [f"b_{i + 1}" for i in range(n)])
    rows = []
    for pid, tr in enumerate(trajs):
        for k, t in enumerate(tr.times):
            rows.append(
                [str(pid), str(k), fmt(t)]
                + [fmt(v) for v in tr.states[k]]
                + [format(int(tr.alive_masks[k]), "b").zfill(n)]
                + [fmt(v) for v in tr.Y[k]]
                + [fmt(v) for v in tr.boundary[k]]
            )
    return _write_rows(path, header, rows)


def export_killing(trajs, path):
    """`path_id,n,rho_n,removed_index` for every removal event."""
    rows = []
    for pid, tr in enumerate(trajs):
        removed = IndexSet.full(tr.states.shape[1])
        for n_event, (rho, survivors) in enumerate(
                zip(tr.killing.times, tr.killing.index_sets)):
            gone = [i for i in removed if i not in survivors]
            rows.append([str(pid), str(n_event), fmt(rho), str(gone[0])])
            removed = survivors
    return _write_rows(path, ["path_id", "n", "rho_n", "removed_index"], rows)


def export_summary(summary, path):
    """Checkpoint view of a summary run, one row per path."""
    n = summary.Y0.shape[1]
    header = (["path_id"] + [f"y0_{i + 1}" for i in range(n)]
              + [f"ymid_{i + 1}" for i in range(n)]
              + [f"yT_{i + 1}" for i in range(n)]
              + [f"tau_{i + 1}" for i in range(n)])
    rows = []
    for pid in range(summary.n_paths):
        rows.append([str(pid)]
                    + [fmt(v) for v in summary.Y0[pid]]
                    + [fmt(v) for v in summary.Ymid[pid]]
                    + [fmt(v) for v in summary.YT[pid]]
                    + [fmt(v) if np.isfinite(v) else "inf"
                       for v in summary.taus[pid]])
    return _write_rows(path, header, rows)


def export_lattice(lattice_field, path):
    """`k,x1..xN,h_bits,i,value` over every stored lattice node."""
    spec = lattice_field.spec
    n = spec.params.n_particles
    header = (["k"] + [f"x{i + 1}" for i in range(n)] + ["h_bits", "i", "value"])
    rows = []
    for k, layer in enumerate(lattice_field.values):
        axes = [spec.axis_positions(i, k) for i in range(1, n + 1)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        flat = layer.reshape(-1, 2**n, n)
        for row, x in enumerate(pts):
            for hm in range(2**n):
                for i in range(n):
                    rows.append([str(k)] + [fmt(c) for c in x]
                                + [format(hm, "b").zfill(n), str(i + 1),
                                   fmt(flat[row, hm, i])])
    return _write_rows(path, header, rows)


def export_fixed_points(report, path):
    rows = [[fmt(p), fmt(r)]
            for p, r in zip(report.fixed_points, report.residuals)]
    return _write_rows(path, ["p", "residual"], rows)


def export_scan(report, path):
    rows = [[fmt(p), fmt(g)] for p, g in report.samples]
    return _write_rows(path, ["p", "G_p"], rows)


def export_clearing(result, path):
    n = result.capital.shape[0]
    rows = [[str(i + 1), fmt(result.capital[i]),
             "1" if (i + 1) in result.default_set else "0"]
            + [fmt(result.payments[i, j]) for j in range(n)]
            for i in range(n)]
    header = ["bank", "capital", "default"] + [f"pay_from_{j + 1}" for j in range(n)]
    return _write_rows(path, header, rows)


def config_hash(canonical):
    """Stable digest of the parsed config tree."""
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"),
                      default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path, run_config, outputs, wall_time, extra=None):
    import mbfield

    record = {
        "config_hash": config_hash(run_config.canonical),
        "task": run_config.task,
        "seed": run_config.seed,
        "wall_time_s": round(wall_time, 3),
        "outputs": [str(p) for p in outputs],
        "versions": {
            "mbfield": mbfield.__version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    if extra:
        record.update(extra)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def wall_clock():
    return time.perf_counter()
