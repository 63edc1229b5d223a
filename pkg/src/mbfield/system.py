"""Core domain types: system parameters, interaction network, particle
configurations, and initial data.

Particles are numbered 1..N throughout the public API.  A configuration
(subset of alive particles) is an :class:`IndexSet` backed by a bitmask,
where particle ``i`` occupies bit ``i - 1``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AliveSetOutOfRange,
    CapacityExceeded,
    NegativeEntry,
    NonSquare,
    StateCountMismatch,
    TimeOutOfRange,
)

MAX_PARTICLES = 20  # 2^N configurations are materialized; hard desk-scale cap


@dataclass(frozen=True)
class SystemParams:
    """Global parameters: particle count N, volatility sigma, horizon T."""

    n_particles: int
    sigma: float
    horizon: float

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not (self.sigma > 0.0 and np.isfinite(self.sigma)):
            raise ValueError("sigma must be positive and finite")
        if not (self.horizon > 0.0 and np.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")


class IndexSet:
    """Immutable subset of {1..N} with a canonical bitmask representation.

    Bit ``i - 1`` of :attr:`mask` is set iff particle ``i`` is a member.
    """

    __slots__ = ("mask", "members")

    def __init__(self, members=()):
        mask = 0
        for i in members:
            i = int(i)
            if i < 1:
                raise ValueError(f"particle indices are 1-based, got {i}")
            mask |= 1 << (i - 1)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "members", _mask_members(mask))

    @classmethod
    def from_mask(cls, mask):
        out = cls.__new__(cls)
        object.__setattr__(out, "mask", int(mask))
        object.__setattr__(out, "members", _mask_members(int(mask)))
        return out

    @classmethod
    def full(cls, n):
        return cls.from_mask((1 << n) - 1)

    @classmethod
    def empty(cls):
        return cls.from_mask(0)

    def __setattr__(self, *a):  # pragma: no cover - immutability guard
        raise AttributeError("IndexSet is immutable")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, i):
        return i >= 1 and bool(self.mask >> (i - 1) & 1)

    def __eq__(self, other):
        return isinstance(other, IndexSet) and self.mask == other.mask

    def __hash__(self):
        return hash(self.mask)

    def __repr__(self):
        return "{" + ",".join(map(str, self.members)) + "}"

    def remove(self, i):
        if i not in self:
            raise KeyError(f"particle {i} not in {self}")
        return IndexSet.from_mask(self.mask & ~(1 << (i - 1)))

    def issubset(self, other):
        return self.mask & ~other.mask == 0

    @property
    def min_member(self):
        if not self.members:
            raise ValueError("empty IndexSet has no minimal member")
        return self.members[0]

    @property
    def indices0(self):
        """Members as 0-based numpy indices (for array slicing)."""
        return np.asarray(self.members, dtype=np.intp) - 1


def _mask_members(mask):
    out = []
    i = 1
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Validated nonnegative N x N interaction weights D.

    ``row_sums[i-1]`` is the level-1 killing barrier of particle ``i``;
    ``row_sum_max`` is cached because grid bounds depend on it.
    """

    entries: np.ndarray
    row_sums: np.ndarray = field(init=False)
    row_sum_max: float = field(init=False)

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        row_sums = entries.sum(axis=1)
        row_sums.setflags(write=False)
        object.__setattr__(self, "row_sums", row_sums)
        object.__setattr__(self, "row_sum_max", float(row_sums.max()))

    @property
    def n(self):
        return self.entries.shape[0]


def build_network(raw_entries):
    """Validate a square nonnegative matrix and cache its row sums.

    Raises NonSquare on shape mismatch and NegativeEntry(i, j) (1-based)
    on the first negative weight encountered.
    """
    entries = np.asarray(raw_entries, dtype=float)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {entries.shape}")
    if not np.all(np.isfinite(entries)):
        raise ValueError("matrix entries must be finite")
    neg = np.argwhere(entries < 0.0)
    if neg.size:
        i, j = neg[0]
        raise NegativeEntry(int(i) + 1, int(j) + 1, float(entries[i, j]))
    return AdjacencyMatrix(entries)


def symmetric_network(n, alpha, scaled=False):
    """All-equal network: D_ij = alpha, or alpha/N when ``scaled``.

    The unscaled form is the finite-system convention; the scaled form is
    the mean-field normalization.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not alpha > 0.0:
        raise ValueError("alpha must be positive")
    value = alpha / n if scaled else alpha
    return AdjacencyMatrix(np.full((n, n), value, dtype=float))


def enumerate_configs(n):
    """All 2^N configurations, by cardinality then bitmask value.

    The cascade is built in exactly this order: every level-(k-1)
    configuration precedes every level-k one.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MAX_PARTICLES:
        raise CapacityExceeded(
            f"N={n} implies 2^{n} configurations; cap is N <= {MAX_PARTICLES}"
        )
    masks = sorted(range(1 << n), key=lambda m: (bin(m).count("1"), m))
    return [IndexSet.from_mask(m) for m in masks]


@dataclass(frozen=True)
class InitialData:
    """Deterministic start: time, states xi, and alive set chi."""

    start_time: float
    initial_states: np.ndarray
    alive_set: IndexSet

    def __post_init__(self):
        states = np.array(self.initial_states, dtype=float)
        states.setflags(write=False)
        object.__setattr__(self, "initial_states", states)


def validate_initial_data(params, data):
    """Check initial data against the system parameters; return it unchanged."""
    if not (0.0 <= data.start_time <= params.horizon):
        raise TimeOutOfRange(
            f"start_time {data.start_time} outside [0, {params.horizon}]"
        )
    if data.initial_states.shape != (params.n_particles,):
        raise StateCountMismatch(
            f"expected {params.n_particles} initial states, "
            f"got shape {data.initial_states.shape}"
        )
    if not np.all(np.isfinite(data.initial_states)):
        raise StateCountMismatch("initial states must be finite")
    if not data.alive_set.issubset(IndexSet.full(params.n_particles)):
        raise AliveSetOutOfRange(
            f"alive set {data.alive_set} not contained in {{1..{params.n_particles}}}"
        )
    return data
