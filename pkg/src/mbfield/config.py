"""Run configuration: TOML parsing with strict schemas.

A run file names exactly one task and carries its section::

    task = "cascade"
    seed = 42

    [system]
    n_particles = 2
    sigma = 1.0
    horizon = 1.0

    [network.symmetric]
    alpha = 1.0
    scaled = false

    [cascade]
    space_steps = 240
    time_steps = 240

Unknown keys anywhere are rejected, so typos fail loudly instead of
silently running defaults.
"""

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .system import (
    AdjacencyMatrix,
    IndexSet,
    InitialData,
    SystemParams,
    build_network,
    symmetric_network,
    validate_initial_data,
)

TASKS = ("cascade", "simulate", "lattice", "meanfield", "clearing")

_TOP_KEYS = {"task", "seed", "output_dir", "system", "network"} | set(TASKS)
_SECTION_KEYS = {
    "system": {"n_particles", "sigma", "horizon"},
    "network": {"matrix", "symmetric"},
    "network.symmetric": {"alpha", "scaled"},
    "cascade": {"method", "space_steps", "time_steps", "heatmap_time",
                "curve_times", "mc_steps", "mc_paths"},
    "simulate": {"dt", "n_paths", "start_time", "initial_states", "alive",
                 "record", "space_steps", "time_steps"},
    "lattice": {"time_steps", "start_time", "initial_states", "alive",
                "max_iter", "from_below", "compare_time_fraction"},
    "meanfield": {"alpha", "atoms", "weights", "grid", "tol",
                  "calibrate_target", "experiment_n", "lattice_steps"},
    "clearing": {"external_assets", "external_liabilities", "recovery"},
}

_STOCHASTIC_TASKS = {"simulate"}


@dataclass(frozen=True)
class RunConfig:
    """Validated run description: one task plus its inputs."""

    task: str
    seed: int
    output_dir: str
    system: SystemParams
    network: AdjacencyMatrix
    section: dict
    canonical: dict  # parsed key tree, for the manifest hash


def _reject_unknown(mapping, allowed, where):
    for key in mapping:
        if key not in allowed:
            raise ValidationError(f"{where}.{key}" if where else key,
                                  f"unknown config key {key!r} in {where or 'top level'}")


def load_config(path):
    """Parse and validate a run file; raises ParseError / ValidationError."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ParseError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:  # message carries line/column
        raise ParseError(f"config parse error: {exc}") from None
    return validate_config(raw)


def validate_config(raw):
    _reject_unknown(raw, _TOP_KEYS, "")
    task = raw.get("task")
    if not isinstance(task, str) or task not in TASKS:
        raise ValidationError("task", f"task must be one of {TASKS}, got {task!r}")
    extra_tasks = [t for t in TASKS if t in raw and t != task]
    if extra_tasks:
        raise ValidationError("task",
                              f"config carries sections for other tasks: {extra_tasks}")
    seed = raw.get("seed")
    if seed is None:
        if task in _STOCHASTIC_TASKS or \
                (task == "cascade" and raw.get("cascade", {}).get("method") == "mc"):
            raise ValidationError("seed", "stochastic tasks require a seed")
        seed = 0
    if not isinstance(seed, int) or seed < 0:
        raise ValidationError("seed", "seed must be a nonnegative integer")

    sys_raw = raw.get("system")
    if not isinstance(sys_raw, dict):
        raise ValidationError("system", "missing [system] section")
    _reject_unknown(sys_raw, _SECTION_KEYS["system"], "system")
    try:
        system = SystemParams(int(sys_raw.get("n_particles", 0)),
                              float(sys_raw.get("sigma", 0.0)),
                              float(sys_raw.get("horizon", 0.0)))
    except (ValueError, TypeError) as exc:
        raise ValidationError("system", f"invalid system parameters: {exc}") from None

    net_raw = raw.get("network")
    if task != "meanfield":
        if not isinstance(net_raw, dict):
            raise ValidationError("network", "missing [network] section")
        _reject_unknown(net_raw, _SECTION_KEYS["network"], "network")
        has_matrix = "matrix" in net_raw
        has_sym = "symmetric" in net_raw
        if has_matrix == has_sym:
            raise ValidationError("network",
                                  "provide exactly one of matrix / symmetric")
        if has_matrix:
            try:
                network = build_network(net_raw["matrix"])
            except Exception as exc:
                raise ValidationError("network.matrix", str(exc)) from None
        else:
            sym = net_raw["symmetric"]
            _reject_unknown(sym, _SECTION_KEYS["network.symmetric"],
                            "network.symmetric")
            try:
                network = symmetric_network(system.n_particles,
                                            float(sym["alpha"]),
                                            bool(sym.get("scaled", False)))
            except Exception as exc:
                raise ValidationError("network.symmetric", str(exc)) from None
        if network.n != system.n_particles:
            raise ValidationError("network.matrix",
                                  "matrix size does not match n_particles")
    else:
        network = symmetric_network(system.n_particles, 1.0)  # placeholder

    section_raw = raw.get(task, {})
    if not isinstance(section_raw, dict):
        raise ValidationError(task, f"[{task}] must be a table")
    _reject_unknown(section_raw, _SECTION_KEYS[task], task)
    section = dict(section_raw)
    _validate_section(task, section, system)
    return RunConfig(
        task=task,
        seed=seed,
        output_dir=str(raw.get("output_dir", "out")),
        system=system,
        network=network,
        section=section,
        canonical=raw,
    )


def _validate_section(task, section, system):
    if task == "cascade":
        method = section.get("method", "fd")
        if method not in ("fd", "mc"):
            raise ValidationError("cascade.method", f"unknown method {method!r}")
    if task == "simulate":
        if "dt" not in section or "n_paths" not in section:
            raise ValidationError("simulate", "dt and n_paths are required")
        if float(section["dt"]) <= 0.0:
            raise ValidationError("simulate.dt", "dt must be positive")
        record = section.get("record", "full")
        if record not in ("full", "summary"):
            raise ValidationError("simulate.record", f"unknown mode {record!r}")
    if task == "lattice" and "time_steps" not in section:
        raise ValidationError("lattice.time_steps", "time_steps is required")
    if task == "meanfield":
        if "alpha" not in section and "calibrate_target" not in section:
            raise ValidationError("meanfield.alpha",
                                  "provide alpha or calibrate_target")
    if task == "clearing":
        for key in ("external_assets", "external_liabilities"):
            if key not in section:
                raise ValidationError(f"clearing.{key}", f"{key} is required")
        if not 0.0 <= float(section.get("recovery", 0.0)) < 1.0:
            raise ValidationError("clearing.recovery", "recovery must be in [0, 1)")


def initial_data_from(section, system, default_state=None):
    """Initial data for simulate/lattice sections."""
    n = system.n_particles
    states = section.get("initial_states")
    if states is None:
        if default_state is None:
            raise ValidationError("initial_states", "initial_states is required")
        states = [default_state] * n
    states = np.asarray(states, dtype=float)
    alive = section.get("alive")
    alive_set = IndexSet.full(n) if alive is None else IndexSet(alive)
    data = InitialData(float(section.get("start_time", 0.0)), states, alive_set)
    return validate_initial_data(system, data)
