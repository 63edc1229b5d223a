"""Financial-network reading of the particle system, plus the static
clearing problem with proportional repayment.

The capital of bank i is its state minus the expected loss on interbank
claims, K^i_t = X^i_t - (1-R) sum_j D_ij Y^j_t, where Y^j is the
conditional default probability of the debtor and R the recovery rate;
default is capital at or below zero.  The static problem replaces the
dynamics with a one-shot fixed point under pro-rata repayment out of a
defaulting bank's resources.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, ShapeMismatch
from .grids import weighted_row_sum
from .system import IndexSet


@dataclass(frozen=True)
class BankNetwork:
    """Liabilities D (D_ij owed to i by j), external assets/liabilities,
    and the recovery rate."""

    liabilities: object  # AdjacencyMatrix
    external_assets: np.ndarray
    external_liabilities: np.ndarray
    recovery: float

    def __post_init__(self):
        n = self.liabilities.n
        a = np.asarray(self.external_assets, dtype=float)
        d = np.asarray(self.external_liabilities, dtype=float)
        if a.shape != (n,) or d.shape != (n,):
            raise ShapeMismatch("asset/liability vectors must have length N")
        if np.any(a < 0.0) or np.any(d < 0.0):
            raise ValueError("external assets and liabilities must be >= 0")
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(d)):
            raise ValueError("external assets and liabilities must be finite")
        if not 0.0 <= self.recovery < 1.0:
            raise ValueError("recovery rate must lie in [0, 1)")
        a.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "external_assets", a)
        object.__setattr__(self, "external_liabilities", d)

    @property
    def n(self):
        return self.liabilities.n


@dataclass(frozen=True)
class ClearingResult:
    """Fixed point of the static clearing problem."""

    capital: np.ndarray
    payments: np.ndarray
    default_set: IndexSet
    iterations: int
    residual: float


def capital_from_fbsde(states, probabilities, network, recovery):
    """Capital paths K = X - (1-R) sum_j D_ij Y^j, elementwise in time.

    ``states`` and ``probabilities`` share a trailing particle axis.
    Uses the same fixed-order weighted sum as the simulator's kill rule,
    so with R = 0 the first grid time with K <= 0 reproduces the
    simulator's kill times exactly.
    """
    X = np.asarray(states, dtype=float)
    Y = np.asarray(probabilities, dtype=float)
    if X.shape != Y.shape:
        raise ShapeMismatch(f"states {X.shape} vs probabilities {Y.shape}")
    D = network.entries
    n = D.shape[0]
    if X.shape[-1] != n:
        raise ShapeMismatch(f"trailing axis {X.shape[-1]} != N = {n}")
    K = np.empty_like(X)
    for i in range(n):
        K[..., i] = X[..., i] - (1.0 - recovery) * weighted_row_sum(
            D[i], [Y[..., j] for j in range(n)])
    return K


def kill_time_consistency(trajectories, network, recovery=0.0, chi=None):
    """Check that recorded kill times equal the first grid crossing of
    K <= 0 on every path; returns the number of mismatching (path,
    particle) pairs.

    Particles outside the initial alive set ``chi`` are skipped: their
    removal is part of the initial data, not a capital crossing.
    """
    mismatches = 0
    for traj in trajectories:
        K = capital_from_fbsde(traj.states, traj.Y, network, recovery)
        crossed = K <= 0.0
        for i in range(K.shape[1]):
            if chi is not None and (i + 1) not in chi:
                continue
            tau = traj.killing.taus[i]
            hit = np.nonzero(crossed[:, i])[0]
            k_cross = traj.times[hit[0]] if hit.size else np.inf
            if not (k_cross == tau or (np.isinf(k_cross) and np.isinf(tau))):
                mismatches += 1
    return mismatches


def mark_to_market(probabilities, network, recovery):
    """Current claim values: full face if the debtor survives, recovery
    fraction otherwise: Phi_ij = D_ij (1 - (1-R) Y_j)."""
    Y = np.asarray(probabilities, dtype=float)
    D = network.entries
    if Y.shape != (D.shape[0],):
        raise ShapeMismatch("probabilities must have length N")
    if np.any(Y < 0.0) or np.any(Y > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return D * (1.0 - (1.0 - recovery) * Y)[None, :]


def _clearing_rhs(net, K):
    """One application of the clearing map at capital vector K."""
    D = net.liabilities.entries
    n = net.n
    col_sums = D.sum(axis=0)
    solvent = K > 0.0
    frac = np.zeros(n)
    nz = col_sums > 0.0
    frac[nz] = np.clip((K[nz] + col_sums[nz]) / col_sums[nz], 0.0, None)
    pay_frac = np.where(solvent, 1.0, frac)
    pay_frac = np.where(nz, pay_frac, np.where(solvent, 1.0, 0.0))
    payments = D * pay_frac[None, :]
    K_new = (net.external_assets + payments.sum(axis=1)
             - net.external_liabilities - D.sum(axis=0))
    return K_new, payments


def static_clearing_proportional(net, tol=1e-10, max_sweeps=10_000):
    """Greatest clearing fixed point under pro-rata repayment.

    Iterates from the all-solvent payment vector; the map is monotone,
    so capitals fall and the default set only grows, changing at most
    N + 1 times.  Whenever the default set stabilizes the fixed point is
    solved exactly from the induced affine system and verified by
    substitution.
    """
    n = net.n
    D = net.liabilities.entries
    col_sums = D.sum(axis=0)
    K = (net.external_assets + D.sum(axis=1)
         - net.external_liabilities - D.sum(axis=0))
    iterations = 0
    trace = []
    seen_sets = 0
    prev_defaults = None
    while iterations < max_sweeps:
        K_new, payments = _clearing_rhs(net, K)
        iterations += 1
        defaults = K_new <= 0.0
        if prev_defaults is None or not np.array_equal(defaults, prev_defaults):
            seen_sets += 1
            prev_defaults = defaults.copy()
            if seen_sets > n + 2:
                raise NoConvergence(
                    "default set kept changing beyond the monotone bound",
                    last_iterate=K_new, trace=trace)
        trace.append(float(np.max(np.abs(K_new - K))))
        if trace[-1] <= tol:
            K = K_new
            break
        # affine solve on the stabilized regime: payments of defaulters in
        # the partial-recovery branch are linear in their capital
        K_try = _affine_regime_solve(net, K_new)
        if K_try is not None:
            K = K_try
            break
        K = K_new
    else:
        raise NoConvergence("clearing iteration exhausted its sweep budget",
                            last_iterate=K, trace=trace)
    K_rhs, payments = _clearing_rhs(net, K)
    residual = float(np.max(np.abs(K_rhs - K)))
    if residual > tol:
        K = K_rhs
        K_rhs, payments = _clearing_rhs(net, K)
        residual = float(np.max(np.abs(K_rhs - K)))
    if residual > tol:
        raise NoConvergence(f"clearing residual {residual} above {tol}",
                            last_iterate=K, trace=trace)
    default_set = IndexSet([i + 1 for i in range(n) if K[i] <= 0.0])
    return ClearingResult(K, payments, default_set, iterations, residual)


def _affine_regime_solve(net, K_guess):
    """Solve the clearing equations exactly for the regime implied by
    ``K_guess``; returns None if the solution leaves the regime.

    Within a regime (who is solvent, who pays partially, who pays
    nothing) the map is affine: partial payers contribute
    D_ij (K_j + L_j)/L_j with L_j the claims column sum.
    """
    n = net.n
    D = net.liabilities.entries
    col_sums = D.sum(axis=0)
    solvent = K_guess > 0.0
    partial = (~solvent) & (col_sums > 0.0) & (K_guess + col_sums >= 0.0)
    zero_pay = (~solvent) & ~partial
    A = np.zeros((n, n))
    base = (net.external_assets - net.external_liabilities - D.sum(axis=0)
            + D[:, solvent].sum(axis=1))
    for j in range(n):
        if partial[j]:
            base = base + D[:, j]
            A[:, j] = D[:, j] / col_sums[j]
    try:
        K = np.linalg.solve(np.eye(n) - A, base)
    except np.linalg.LinAlgError:
        return None
    if not np.array_equal(K > 0.0, solvent):
        return None
    if np.any(K[partial] + col_sums[partial] < -1e-12):
        return None
    floor_binding = zero_pay & (col_sums > 0.0)
    if np.any(K[floor_binding] + col_sums[floor_binding] > 1e-12):
        return None
    return K


def default_report(trajectories, network):
    """Per-bank default frequencies, mean default times among defaulters,
    and start/end capital summaries from simulated paths."""
    trajectories = list(trajectories)
    if not trajectories:
        return {"n_paths": 0, "banks": []}
    n = trajectories[0].states.shape[1]
    horizon = float(trajectories[0].times[-1])
    taus = np.stack([tr.killing.taus for tr in trajectories])
    K0 = np.stack([
        capital_from_fbsde(tr.states[0], tr.Y[0], network.liabilities,
                           network.recovery)
        for tr in trajectories])
    defaulted = taus <= horizon
    banks = []
    for i in range(n):
        d = defaulted[:, i]
        banks.append({
            "bank": i + 1,
            "default_frequency": float(d.mean()),
            "mean_default_time": float(taus[d, i].mean()) if d.any() else None,
            "mean_initial_capital": float(K0[:, i].mean()),
        })
    return {"n_paths": len(trajectories), "banks": banks}
