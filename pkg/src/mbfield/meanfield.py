"""Scalar fixed-point problem of the infinite-population limit.

Under the ansatz that kill times decorrelate as the population grows,
the population kill fraction p solves p = G(p) with

    G(p) = integral of 2 Phi(((alpha p - x) ^ 0) / (sigma sqrt(T)))
           over the initial law of the representative state.

G is continuous and nondecreasing; p = 1 is a fixed point whenever the
whole initial law sits at or below alpha, and interior fixed points may
coexist with it, so the map is scanned globally rather than iterated.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import NoRoot
from .lattice import LatticeSpec, tarski_from_above
from .system import IndexSet, InitialData, SystemParams, symmetric_network
from .rng import substream

ALPHA_MAX = 1e6


@dataclass(frozen=True)
class MeanFieldProblem:
    """Interaction strength, volatility, horizon, and initial law.

    The law is a finite list of (atom, weight) pairs on [0, inf); a point
    mass is the one-atom case.
    """

    alpha: float
    sigma: float
    horizon: float
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_1d(np.asarray(self.atoms, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if atoms.shape != weights.shape:
            raise ValueError("atoms and weights must align")
        if np.any(atoms < 0.0):
            raise ValueError("atoms must lie in [0, inf)")
        if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not (self.alpha > 0.0 and self.sigma > 0.0 and self.horizon > 0.0):
            raise ValueError("alpha, sigma, horizon must be positive")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def point_mass(cls, alpha, sigma, horizon, xi):
        return cls(alpha, sigma, horizon, np.array([xi]), np.array([1.0]))


@dataclass(frozen=True)
class FixedPointReport:
    """Roots of G(p) = p with residuals, plus the scan samples."""

    fixed_points: tuple
    residuals: tuple
    bracket_count: int
    samples: np.ndarray  # (grid+1, 2) columns (p, G(p))


def mf_map(problem, p):
    """G(p): population kill fraction implied by barrier level alpha*p.

    Atoms at or below the barrier contribute 1 (their particle starts
    absorbed), which the capped reflection formula produces on its own.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    z = np.minimum(problem.alpha * p - problem.atoms, 0.0)
    vals = 2.0 * ndtr(z / (problem.sigma * np.sqrt(problem.horizon)))
    return float(np.sum(problem.weights * vals))


def find_fixed_points(problem, grid=2000, tol=1e-10):
    """All roots of h(p) = G(p) - p on [0, 1].

    Scans a uniform grid, bisects every sign change of h, and tests both
    endpoints explicitly: a root touched tangentially (p = 1 whenever
    G(1) = 1) produces no sign change.  Roots closer than 2/grid are
    deduplicated.
    """
    if grid < 1000:
        raise ValueError("grid must be >= 1000")
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    ps = np.linspace(0.0, 1.0, grid + 1)
    gs = np.array([mf_map(problem, p) for p in ps])
    hs = gs - ps
    roots = []
    brackets = 0
    for a, b, ha, hb in zip(ps[:-1], ps[1:], hs[:-1], hs[1:]):
        if ha == 0.0:
            roots.append(float(a))
            continue
        if ha * hb < 0.0:
            brackets += 1
            lo, hi, hlo = a, b, ha
            while hi - lo > 1e-15:
                mid = 0.5 * (lo + hi)
                hm = mf_map(problem, mid) - mid
                if abs(hm) <= tol:
                    lo = hi = mid
                    break
                if hlo * hm < 0.0:
                    hi = mid
                else:
                    lo, hlo = mid, hm
            roots.append(0.5 * (lo + hi))
    for endpoint in (0.0, 1.0):
        if abs(mf_map(problem, endpoint) - endpoint) <= tol:
            roots.append(endpoint)
    roots = sorted(roots)
    dedup = []
    for r in roots:
        if not dedup or r - dedup[-1] > 2.0 / grid:
            dedup.append(r)
    residuals = tuple(abs(mf_map(problem, r) - r) for r in dedup)
    return FixedPointReport(
        fixed_points=tuple(dedup),
        residuals=residuals,
        bracket_count=brackets,
        samples=np.column_stack([ps, gs]),
    )


def calibrate_alpha(target_p, sigma, horizon, xi_equals_alpha=True, tol=1e-10):
    """Interaction strength making ``target_p`` an interior fixed point of
    the point-mass-at-alpha family.

    Solves 2 Phi(alpha (p - 1) / (sigma sqrt(T))) = p for alpha by
    bisection.  The left side decreases from 1 to 0 in alpha, so a root
    exists for every p in (0, 1); targets so close to 1 that alpha would
    exceed 1e6 are reported as NoRoot.
    """
    if not xi_equals_alpha:
        raise NotImplementedError("only the xi = alpha family is supported")
    if not 0.0 < target_p < 1.0:
        raise ValueError("target_p must lie strictly inside (0, 1)")
    s = sigma * np.sqrt(horizon)

    def h(alpha):
        return 2.0 * ndtr(alpha * (target_p - 1.0) / s) - target_p

    lo, hi = 0.0, ALPHA_MAX
    if h(hi) > 0.0:
        raise NoRoot(f"target {target_p} needs alpha beyond {ALPHA_MAX}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def finite_vs_mf_experiment(n_list, problem, paths=None, lattice_steps=24,
                            seed=0, budget=None):
    """Finite-population greatest solutions against the fixed-point set.

    For each N, builds the population-normalized all-equal network
    (weights alpha/N), draws the start states from the initial law
    (degenerate draw for a point mass), runs the from-above lattice
    iteration, and reports the population average of the start values
    next to its distance from the nearest fixed point.

    Returns a list of dicts with keys n, y_bar, nearest_fp, distance,
    iterations.
    """
    report = find_fixed_points(problem)
    fps = np.array(report.fixed_points)
    rows = []
    for k, n in enumerate(n_list):
        params = SystemParams(n, problem.sigma, problem.horizon)
        network = symmetric_network(n, problem.alpha, scaled=True)
        if len(problem.atoms) == 1:
            xi = np.full(n, float(problem.atoms[0]))
        else:
            gen = substream(seed, 2, k)
            xi = gen.choice(problem.atoms, size=n, p=problem.weights)
        spec = LatticeSpec(params, lattice_steps,
                           InitialData(0.0, xi, IndexSet.full(n)))
        kwargs = {} if budget is None else {"budget": budget}
        result = tarski_from_above(spec, network, **kwargs)
        y_bar = float(result.start_values.mean())
        j = int(np.argmin(np.abs(fps - y_bar)))
        rows.append({
            "n": n,
            "y_bar": y_bar,
            "nearest_fp": float(fps[j]),
            "distance": float(abs(fps[j] - y_bar)),
            "iterations": result.iterations_used,
        })
    return rows
