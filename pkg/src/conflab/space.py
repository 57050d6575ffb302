"""Finite observation spaces, data sequences, bags and dense function tables.

Every table in the package lives over ``Z^N`` with ``Z = X x Y`` finite and
``N = n + 1`` (training sequence plus one test observation).  A table is
stored as a dense ndarray of shape ``(z_card,) * N``; C-order flattening is
the row-major sequence index used by the JSON format.

Values are either float64 (the oracles' working type) or an object array
of :class:`fractions.Fraction` (exact arithmetic used by the universality
chains).  The averaging helpers here work for both.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_BUDGET = 10**7
MAX_PERMUTATION_LENGTH = 9


class BudgetExceeded(RuntimeError):
    """Raised when exact enumeration would exceed the configured table budget."""


def check_budget(z_card: int, N: int, budget: int = DEFAULT_BUDGET) -> int:
    size = z_card**N
    if size > budget:
        raise BudgetExceeded(
            f"{z_card}^{N} = {size} sequences exceeds the budget of {budget} entries"
        )
    return size


@dataclass(frozen=True)
class ObservationSpace:
    x_card: int
    y_card: int

    def __post_init__(self):
        if self.x_card < 1:
            raise ValueError(f"x_card must be >= 1, got {self.x_card}")
        if self.y_card < 2:
            raise ValueError(f"y_card must be >= 2, got {self.y_card}")

    @property
    def z_card(self) -> int:
        return self.x_card * self.y_card

    def encode(self, x: int, y: int) -> int:
        if not (0 <= x < self.x_card and 0 <= y < self.y_card):
            raise ValueError(f"({x}, {y}) is outside {self}")
        return x * self.y_card + y

    def decode(self, z: int) -> tuple[int, int]:
        if not 0 <= z < self.z_card:
            raise ValueError(f"observation {z} is outside {self}")
        return divmod(z, self.y_card)

    def relabel(self, z: int, y: int) -> int:
        """Observation with the object of ``z`` and label ``y``."""
        return self.encode(self.decode(z)[0], y)

    @classmethod
    def parse(cls, text: str) -> "ObservationSpace":
        """Parse ``"XxY"``, e.g. ``"1x3"``."""
        try:
            x, y = (int(part) for part in text.lower().split("x"))
        except ValueError:
            raise ValueError(f"cannot parse space {text!r}; expected e.g. '1x3'") from None
        return cls(x, y)

    def __str__(self):
        return f"{self.x_card}x{self.y_card}"


@dataclass(frozen=True)
class DataSequence:
    """Training observations followed by one test observation."""

    space: ObservationSpace
    obs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "obs", tuple(int(z) for z in self.obs))
        if len(self.obs) < 1:
            raise ValueError("a data sequence needs at least the test observation")
        for z in self.obs:
            if not 0 <= z < self.space.z_card:
                raise ValueError(f"observation {z} is outside {self.space}")

    @property
    def n(self) -> int:
        return len(self.obs) - 1

    @property
    def train(self) -> tuple[int, ...]:
        return self.obs[:-1]

    @property
    def test(self) -> int:
        return self.obs[-1]


@dataclass(frozen=True)
class Bag:
    """Multiset of observations as a count profile over ``Z``."""

    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 0 for c in self.counts):
            raise ValueError(f"negative multiplicity in {self.counts}")

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def z_card(self) -> int:
        return len(self.counts)

    def representative(self) -> tuple[int, ...]:
        """The sorted sequence with this bag."""
        return tuple(z for z, c in enumerate(self.counts) for _ in range(c))

    def orbit_size(self) -> int:
        """Number of distinct orderings (multinomial coefficient)."""
        return multinomial(self.counts)

    def members(self) -> list[int]:
        return [z for z, c in enumerate(self.counts) if c > 0]


def multinomial(counts: Sequence[int]) -> int:
    out = math.factorial(sum(counts))
    for c in counts:
        out //= math.factorial(c)
    return out


def bag_of(seq: DataSequence | Sequence[int], z_card: int | None = None) -> Bag:
    if isinstance(seq, DataSequence):
        z_card, obs = seq.space.z_card, seq.obs
    else:
        obs = tuple(seq)
        if z_card is None:
            raise ValueError("z_card is required for a bare sequence")
    counts = [0] * z_card
    for z in obs:
        counts[z] += 1
    return Bag(tuple(counts))


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    # lexicographically increasing, matching np.unique row order
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_bags(z_card: int, N: int, budget: int = DEFAULT_BUDGET) -> Iterator[Bag]:
    if math.comb(N + z_card - 1, z_card - 1) > budget:
        raise BudgetExceeded(f"too many bags for z_card={z_card}, N={N}")
    for counts in _compositions(N, z_card):
        yield Bag(counts)


def enumerate_sequences(
    space: ObservationSpace, N: int, budget: int = DEFAULT_BUDGET
) -> Iterator[DataSequence]:
    check_budget(space.z_card, N, budget)
    for obs in itertools.product(range(space.z_card), repeat=N):
        yield DataSequence(space, obs)


@lru_cache(maxsize=64)
def sequence_matrix(z_card: int, N: int) -> np.ndarray:
    """All sequences as rows of an int array, in row-major table order."""
    if N == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.indices((z_card,) * N).reshape(N, -1).T
    grids.setflags(write=False)
    return grids


@lru_cache(maxsize=64)
def bag_index(z_card: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    """``(counts, seq_to_bag)``: the bag count matrix and each sequence's bag id.

    Bag ids follow the order of :func:`enumerate_bags`.
    """
    seqs = sequence_matrix(z_card, N)
    counts = np.zeros((seqs.shape[0], z_card), dtype=np.int64)
    for pos in range(N):
        counts[np.arange(seqs.shape[0]), seqs[:, pos]] += 1
    bags, inverse = np.unique(counts, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    bags.setflags(write=False)
    inverse.setflags(write=False)
    return bags, inverse


@dataclass(frozen=True)
class Distribution:
    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if any(p < 0 for p in probs):
            raise ValueError(f"negative probability in {probs}")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {sum(probs)!r}, not 1")

    @property
    def z_card(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @classmethod
    def uniform(cls, z_card: int) -> "Distribution":
        return cls((1.0 / z_card,) * z_card)

    @classmethod
    def from_array(cls, q) -> "Distribution":
        q = np.clip(np.asarray(q, dtype=float), 0.0, None)
        return cls(tuple(q / q.sum()))


@dataclass(frozen=True, eq=False)
class FnTable:
    """Dense map from ``Z^(n+1)`` to the extended nonnegative reals."""

    space: ObservationSpace
    n: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.dtype != object:
            values = values.astype(float)
        shape = (self.space.z_card,) * (self.n + 1)
        if values.size != self.space.z_card ** (self.n + 1):
            raise ValueError(
                f"table has {values.size} values, expected {self.space.z_card}^{self.n + 1}"
            )
        values = values.reshape(shape)
        if values.dtype == object:
            if any(v < 0 for v in values.flat):
                raise ValueError("table has negative entries")
        elif np.isnan(values).any() or (values < 0).any():
            raise ValueError("table has negative or NaN entries")
        object.__setattr__(self, "values", values)

    @property
    def N(self) -> int:
        return self.n + 1

    @property
    def is_exact(self) -> bool:
        return self.values.dtype == object

    def __call__(self, seq: Sequence[int]):
        return self.values[tuple(seq)]

    def __eq__(self, other):
        if not isinstance(other, FnTable):
            return NotImplemented
        return (
            self.space == other.space
            and self.n == other.n
            and np.array_equal(self.values, other.values)
        )

    def with_values(self, values) -> "FnTable":
        return FnTable(self.space, self.n, values)

    def to_float(self) -> "FnTable":
        if not self.is_exact:
            return self
        return self.with_values(np.vectorize(float, otypes=[float])(self.values))

    def to_exact(self) -> "FnTable":
        if self.is_exact:
            return self
        if np.isinf(self.values).any():
            raise ValueError("cannot convert a table with +inf entries to exact form")
        return self.with_values(to_fraction_array(self.values))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def scaled(self, factor) -> "FnTable":
        return self.with_values(self.values * factor)

    @classmethod
    def constant(cls, space: ObservationSpace, n: int, c) -> "FnTable":
        check_budget(space.z_card, n + 1)
        if isinstance(c, Fraction):
            values = np.full((space.z_card,) * (n + 1), c, dtype=object)
        else:
            values = np.full((space.z_card,) * (n + 1), float(c))
        return cls(space, n, values)

    @classmethod
    def from_function(
        cls,
        space: ObservationSpace,
        n: int,
        fn: Callable[[tuple[int, ...]], float],
        budget: int = DEFAULT_BUDGET,
    ) -> "FnTable":
        check_budget(space.z_card, n + 1, budget)
        seqs = sequence_matrix(space.z_card, n + 1)
        values = np.array([fn(tuple(int(z) for z in row)) for row in seqs], dtype=float)
        return cls(space, n, values)

    @classmethod
    def from_bag_function(
        cls, space: ObservationSpace, n: int, fn: Callable[[Bag], float]
    ) -> "FnTable":
        """Fully invariant table with value ``fn(bag)`` on each orbit."""
        check_budget(space.z_card, n + 1)
        bags, inverse = bag_index(space.z_card, n + 1)
        per_bag = np.array([fn(Bag(tuple(row))) for row in bags], dtype=float)
        return cls(space, n, per_bag[inverse])


def to_fraction_array(values: np.ndarray) -> np.ndarray:
    out = np.empty(values.shape, dtype=object)
    flat_in = np.asarray(values, dtype=float).reshape(-1)
    flat_out = out.reshape(-1)
    for i, v in enumerate(flat_in):
        flat_out[i] = Fraction(float(v))
    return out


def _divide(total, count: int):
    if total.dtype == object:
        return total / Fraction(count)
    return total / count


def permutation_mean(values: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Average of ``values`` over all permutations of the given positions.

    Iterates every position permutation (``len(axes)!`` transposes), so
    ``len(axes)`` is limited to :data:`MAX_PERMUTATION_LENGTH`.
    """
    axes = list(axes)
    if len(axes) > MAX_PERMUTATION_LENGTH:
        raise BudgetExceeded(f"{len(axes)}! permutations exceeds the enumeration limit")
    if len(axes) <= 1:
        return values.copy()
    total = None
    count = 0
    base = list(range(values.ndim))
    for perm in itertools.permutations(axes):
        order = base.copy()
        for src, dst in zip(axes, perm):
            order[src] = dst
        term = np.transpose(values, order)
        total = term.copy() if total is None else total + term
        count += 1
    return _canonicalize(_divide(total, count), axes)


def _canonicalize(values: np.ndarray, axes: list[int]) -> np.ndarray:
    """Copy each cell's value from the cell with the given coordinates sorted.

    Float sums accumulate in a different order at permuted cells, so without
    this the average is invariant only up to rounding.
    """
    idx = np.indices(values.shape)
    idx[axes] = np.sort(idx[axes], axis=0)
    return values[tuple(idx)]


def orbit_mean(table: FnTable, bag: Bag):
    """Mean of ``table`` under the orbit-uniform exchangeable measure of ``bag``.

    Averages over all ``N!`` position permutations of the bag's representative.
    """
    if bag.N != table.N:
        raise ValueError(f"bag has {bag.N} elements, table expects {table.N}")
    if bag.z_card != table.space.z_card:
        raise ValueError("bag and table are over different spaces")
    if table.N > MAX_PERMUTATION_LENGTH:
        raise BudgetExceeded(f"{table.N}! orderings exceeds the enumeration limit")
    rep = bag.representative()
    total = 0 if table.is_exact else 0.0
    count = 0
    for perm in itertools.permutations(range(table.N)):
        total = total + table.values[tuple(rep[i] for i in perm)]
        count += 1
    return total / (Fraction(count) if table.is_exact else count)


def orbit_sums(table: FnTable) -> tuple[np.ndarray, np.ndarray]:
    """``(bag_counts, sums)``: the sum of the table over each bag's distinct orderings."""
    bags, inverse = bag_index(table.space.z_card, table.N)
    flat = table.flat()
    if table.is_exact:
        sums = np.zeros(bags.shape[0], dtype=object)
        sums[:] = Fraction(0)
        np.add.at(sums, inverse, flat)
    else:
        sums = np.zeros(bags.shape[0])
        np.add.at(sums, inverse, flat)
    return bags, sums


def orbit_means(table: FnTable) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`orbit_mean` for every bag at once."""
    bags, sums = orbit_sums(table)
    sizes = np.array([multinomial(row) for row in bags])
    if table.is_exact:
        return bags, np.array([s / int(k) for s, k in zip(sums, sizes)], dtype=object)
    return bags, sums / sizes


def iid_expectation(table: FnTable, Q: Distribution | Sequence[float]):
    """Exact expectation of ``table`` under the product measure ``Q^N``.

    Sequences of probability zero are dropped before summation, so a +inf
    entry there contributes 0.
    """
    q = Q.as_array() if isinstance(Q, Distribution) else np.asarray(Q, dtype=float)
    if q.shape != (table.space.z_card,):
        raise ValueError("distribution and table are over different spaces")
    support = np.flatnonzero(q > 0)
    values = table.to_float().values
    sub = values[np.ix_(*([support] * table.N))]
    qs = q[support]
    out = sub
    for _ in range(table.N):
        # contract the last axis; infinities only survive on positive-mass entries
        out = np.tensordot(out, qs, axes=([out.ndim - 1], [0]))
    return float(out)


def zero_inf_triggered(table: FnTable, Q: Distribution | Sequence[float]) -> bool:
    """Whether the ``inf * 0 = 0`` convention matters for this expectation."""
    q = Q.as_array() if isinstance(Q, Distribution) else np.asarray(Q, dtype=float)
    values = table.to_float().values
    if not np.isinf(values).any():
        return False
    zero = np.flatnonzero(q == 0)
    if zero.size == 0:
        return False
    seqs = sequence_matrix(table.space.z_card, table.N)
    hits = np.isin(seqs, zero).any(axis=1)
    return bool(np.isinf(table.flat()[hits]).any())
