"""Command-line entry point: run one configured task and write its
outputs plus a manifest.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 budget
exceeded.  Errors print a machine-readable JSON record to stderr.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import exporters
from .cascade import build_cascade
from .config import RunConfig, initial_data_from, load_config
from .contagion import BankNetwork, static_clearing_proportional
from .errors import BudgetError, ConfigError, MbfieldError, NumericError
from .lattice import LatticeSpec, iterate_from_below, tarski_from_above
from .meanfield import MeanFieldProblem, calibrate_alpha, find_fixed_points
from .paths import PathConfig, simulate_paths
from .system import IndexSet


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="mbfield",
        description="killed Brownian particle systems with anticipating "
                    "moving boundaries: field builds, simulation, lattice "
                    "cross-checks, mean-field fixed points, network clearing",
    )
    parser.add_argument("config", help="TOML run configuration")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (results do not depend on this)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = RunConfig(cfg.task, args.seed, cfg.output_dir, cfg.system,
                            cfg.network, cfg.section,
                            {**cfg.canonical, "seed": args.seed})
        return run(cfg, out_dir=args.out, threads=args.threads)
    except ConfigError as exc:
        _emit_error(exc, 2)
        return 2
    except BudgetError as exc:
        _emit_error(exc, 4)
        return 4
    except (NumericError, MbfieldError) as exc:
        _emit_error(exc, 3)
        return 3


def _emit_error(exc, code):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record), file=sys.stderr)


def run(cfg, out_dir=None, threads=1):
    """Dispatch one validated run configuration; returns the exit status."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = exporters.wall_clock()
    runner = {
        "cascade": _run_cascade,
        "simulate": _run_simulate,
        "lattice": _run_lattice,
        "meanfield": _run_meanfield,
        "clearing": _run_clearing,
    }[cfg.task]
    outputs, extra = runner(cfg, out, threads)
    exporters.write_manifest(out / "manifest.json", cfg, outputs,
                             exporters.wall_clock() - t0, extra)
    return 0


def _build_field(cfg):
    sec = cfg.section
    return build_cascade(
        cfg.system, cfg.network,
        method=sec.get("method", "fd"),
        space_steps=int(sec.get("space_steps", 240)),
        time_steps=int(sec.get("time_steps", 240)),
        seed=cfg.seed,
        mc_walk=(int(sec.get("mc_steps", 200)), int(sec.get("mc_paths", 2000)),
                 cfg.seed) if sec.get("method") == "mc" else None,
    )


def _run_cascade(cfg, out, threads):
    field = _build_field(cfg)
    sec = cfg.section
    outputs = []
    curve_times = [float(t) for t in
                   sec.get("curve_times", [0.0, 0.5, 0.9])]
    curve_times = [t * cfg.system.horizon for t in curve_times] \
        if max(curve_times, default=0.0) <= 1.0 else curve_times
    outputs.append(exporters.export_curves(
        field, IndexSet([1]), curve_times, out / "level1_curve.csv"))
    if cfg.system.n_particles >= 2:
        t_map = float(sec.get("heatmap_time", 0.0))
        outputs.extend(exporters.export_heatmap(
            field, IndexSet([1, 2]), t_map, "total", out / "level2_heatmap.csv"))
    return outputs, {"isotonic_corrections": field.meta["isotonic_corrections"]}


def _run_simulate(cfg, out, threads):
    sec = cfg.section
    field = _build_field(cfg)
    initial = initial_data_from(sec, cfg.system)
    pc = PathConfig(float(sec["dt"]), int(sec["n_paths"]), cfg.seed, initial)
    record = sec.get("record", "full")
    result = simulate_paths(field, pc, record=record, threads=threads)
    outputs = []
    if record == "full":
        outputs.append(exporters.export_trajectories(result, out / "trajectories.csv"))
        outputs.append(exporters.export_killing(result, out / "killing.csv"))
    else:
        outputs.append(exporters.export_summary(result, out / "summary.csv"))
    return outputs, None


def _run_lattice(cfg, out, threads):
    sec = cfg.section
    initial = initial_data_from(sec, cfg.system)
    spec = LatticeSpec(cfg.system, int(sec["time_steps"]), initial)
    sweep = iterate_from_below if sec.get("from_below") else tarski_from_above
    report = sweep(spec, cfg.network, max_iter=int(sec.get("max_iter", 64)))
    outputs = [exporters.export_lattice(report.fixed_point, out / "lattice.csv")]
    extra = {
        "iterations": report.iterations_used,
        "converged": report.converged,
        "sup_decrements": [float(d) for d in report.sup_decrements],
        "monotone_nonincreasing": report.monotone_nonincreasing,
        "experimental": report.experimental,
        "start_values": [float(v) for v in report.start_values],
    }
    return outputs, extra


def _run_meanfield(cfg, out, threads):
    sec = cfg.section
    sigma, horizon = cfg.system.sigma, cfg.system.horizon
    if "calibrate_target" in sec:
        alpha = calibrate_alpha(float(sec["calibrate_target"]), sigma, horizon)
    else:
        alpha = float(sec["alpha"])
    atoms = np.asarray(sec.get("atoms", [alpha]), dtype=float)
    weights = np.asarray(sec.get("weights", [1.0] * len(atoms)), dtype=float)
    problem = MeanFieldProblem(alpha, sigma, horizon, atoms, weights)
    report = find_fixed_points(problem, grid=int(sec.get("grid", 2000)),
                               tol=float(sec.get("tol", 1e-10)))
    outputs = [
        exporters.export_fixed_points(report, out / "fixed_points.csv"),
        exporters.export_scan(report, out / "scan.csv"),
    ]
    extra = {"alpha": alpha, "fixed_points": [float(p) for p in report.fixed_points]}
    if "experiment_n" in sec:
        from .meanfield import finite_vs_mf_experiment

        rows = finite_vs_mf_experiment(
            [int(n) for n in sec["experiment_n"]], problem,
            lattice_steps=int(sec.get("lattice_steps", 24)), seed=cfg.seed)
        extra["experiment"] = rows
    return outputs, extra


def _run_clearing(cfg, out, threads):
    sec = cfg.section
    net = BankNetwork(
        cfg.network,
        np.asarray(sec["external_assets"], dtype=float),
        np.asarray(sec["external_liabilities"], dtype=float),
        float(sec.get("recovery", 0.0)),
    )
    result = static_clearing_proportional(net)
    outputs = [exporters.export_clearing(result, out / "clearing.csv")]
    extra = {
        "iterations": result.iterations,
        "residual": result.residual,
        "default_set": list(result.default_set.members),
    }
    return outputs, extra


if __name__ == "__main__":
    sys.exit(main())
