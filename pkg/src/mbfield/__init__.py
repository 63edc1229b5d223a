"""Killed Brownian particle systems with anticipating moving boundaries.

The package builds the tiered family of conditional killing-probability
fields (one level per configuration of alive particles), simulates the
killed particle system the fields induce, cross-validates against an
exact discrete-time lattice fixed point, solves the scalar mean-field
fixed-point problem, and maps everything to a financial-contagion
reading with static clearing.
"""

__version__ = "0.1.0"

from .system import (
    AdjacencyMatrix,
    IndexSet,
    InitialData,
    SystemParams,
    build_network,
    enumerate_configs,
    symmetric_network,
    validate_initial_data,
)
from .analytic import (
    FirstPassageQuery,
    first_passage_prob,
    first_passage_values,
    level1_field,
    mc_first_passage_oracle,
    std_normal_cdf,
)
from .cascade import (
    DecouplingField,
    FieldGrid,
    base_field,
    boundary_profile,
    boundary_threshold,
    boundary_value,
    build_cascade,
    dead_index_set,
    domain_contains,
    eval_field,
    resolve_states,
    solve_level_fd,
    solve_level_mc,
    terminal_value,
)
from .grids import GridSpec, build_time_grid, weighted_row_sum
from .lattice import (
    IterationReport,
    LatticeField,
    LatticeSpec,
    compare_to_cascade,
    iterate_from_below,
    psi_map,
    restart_check,
    tarski_from_above,
    verify_tower,
)
from .paths import (
    KillingRecord,
    MartingaleReport,
    PathConfig,
    PathSummary,
    Trajectory,
    flow_property_check,
    martingale_diagnostics,
    simulate_paths,
    terminal_identity_holds,
    z_process,
)
from .meanfield import (
    FixedPointReport,
    MeanFieldProblem,
    calibrate_alpha,
    find_fixed_points,
    finite_vs_mf_experiment,
    mf_map,
)
from .contagion import (
    BankNetwork,
    ClearingResult,
    capital_from_fbsde,
    default_report,
    kill_time_consistency,
    mark_to_market,
    static_clearing_proportional,
)
from .config import RunConfig, load_config
from .cli import run
