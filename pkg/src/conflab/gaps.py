"""Exact IID-versus-exchangeability gap computations and a Monte Carlo coverage harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np

from .conformal import NonconformityMeasure, as_table
from .oracles import CheckReport, TOL_EXCH, TOL_IID, check_e_exchangeable, check_e_iid
from .simplex import IIDPolynomial
from .space import (
    DEFAULT_BUDGET,
    BudgetExceeded,
    Distribution,
    FnTable,
    ObservationSpace,
    bag_index,
    check_budget,
)


def lb(x: Fraction | int) -> float:
    """Binary logarithm of a positive rational, accurate for huge numerators and denominators."""
    x = Fraction(x)
    if x <= 0:
        raise ValueError("lb needs a positive argument")
    return math.log2(x.numerator) - math.log2(x.denominator)


@dataclass
class GapReport:
    N: int
    e_value: Fraction
    bits: float
    reference_asymptotic: float
    validity_check: CheckReport | None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.validity_check is None or self.validity_check.ok

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "e_value": str(self.e_value),
            "e_value_float": float(self.e_value),
            "bits": self.bits,
            "reference_asymptotic": self.reference_asymptotic,
            "validity_check": None if self.validity_check is None else self.validity_check.to_dict(),
            "ok": self.ok,
            **self.extra,
        }


def _fits(z_card: int, N: int, budget: int) -> bool:
    try:
        check_budget(z_card, N, budget)
    except BudgetExceeded:
        return False
    return True


def _single_monomial_poly(z_card: int, counts: tuple[int, ...], coeff: float) -> IIDPolynomial:
    return IIDPolynomial(np.array([counts]), np.array([coeff]))


def permutation_gap(N: int, budget: int = DEFAULT_BUDGET, tol_iid: float = TOL_IID) -> GapReport:
    """IID e-value ``N^N / N!`` on sequences that are permutations of ``N`` symbols.

    The table is ``(N^N/N!)`` times the indicator of "every symbol occurs
    once".  Under ``Q^N`` its expectation is ``N^N * prod(q)``, maximal at the
    uniform ``Q`` with value 1.  Tables beyond the budget are checked through
    their bag polynomial, which is the same object.
    """
    if N < 1:
        raise ValueError("N must be positive")
    e_value = Fraction(N**N, math.factorial(N))
    reference = N * math.log2(math.e) - 0.5 * math.log2(2 * math.pi * N)
    if N == 1:
        return GapReport(1, e_value, 0.0, reference, None, {"path": "trivial"})
    counts = (1,) * N
    if _fits(N, N, budget):
        space = ObservationSpace(1, N)
        table = FnTable.from_function(
            space, N - 1, lambda s: float(e_value) if len(set(s)) == N else 0.0)
        validity = check_e_iid(table, tol_iid)
        path = "table"
    else:
        # orbit sum on the permutation bag is N! * (N^N/N!) = N^N
        validity = check_e_iid(_single_monomial_poly(N, counts, float(N**N)), tol_iid)
        path = "polynomial"
    validity.class_label = "ER"
    q = np.asarray(validity.witness, dtype=float)
    extra = {
        "path": path,
        "sup_at_uniform_gap": float(np.abs(q - 1.0 / N).max()),
        # under the orbit-uniform measure on the permutation bag E has mean N^N/N!,
        # so the table is far from being an exchangeability e-variable
        "orbit_mean_on_permutation_bag": str(e_value),
    }
    return GapReport(N, e_value, lb(e_value), reference, validity, extra)


def binomial_gap(N: int, k: int, budget: int = DEFAULT_BUDGET, tol_iid: float = TOL_IID) -> GapReport:
    """IID e-value for binary sequences with exactly ``k`` ones.

    ``E = 1{#ones = k} / max_p C(N,k) p^k (1-p)^(N-k)``, the maximum sitting at
    ``p = k/N`` (with ``0^0 = 1``), so that ``e = N^N / (C(N,k) k^k (N-k)^(N-k))``.
    """
    if not 0 <= k <= N or N < 1:
        raise ValueError(f"need 0 <= k <= N and N >= 1, got N={N}, k={k}")
    max_prob = Fraction(math.comb(N, k) * k**k * (N - k) ** (N - k), N**N)
    e_value = 1 / max_prob
    space = ObservationSpace(1, 2)
    if _fits(2, N, budget):
        table = FnTable.from_function(space, N - 1, lambda s: float(e_value) if sum(s) == k else 0.0)
        validity = check_e_iid(table, tol_iid)
        path = "table"
    else:
        # orbit sum on the bag (N-k zeros, k ones): C(N,k) * e = N^N / (k^k (N-k)^(N-k))
        coeff = Fraction(N**N, k**k * (N - k) ** (N - k))
        validity = check_e_iid(_single_monomial_poly(2, (N - k, k), float(coeff)), tol_iid)
        path = "polynomial"
    validity.class_label = "ER"
    q = np.asarray(validity.witness, dtype=float)
    extra = {
        "path": path,
        "k": k,
        "maximizer_p": float(q[1]),
        "argmax_gap": abs(float(q[1]) - k / N),
        "local_limit_correction": 0.5 * math.log2(math.pi / 2),
    }
    return GapReport(N, e_value, lb(e_value), 0.5 * math.log2(N), validity, extra)


@dataclass
class FlatnessReport:
    ok: bool
    max_orbit_min: float
    witness_bag: tuple[int, ...]
    exch_report: CheckReport

    def to_dict(self) -> dict:
        return {"ok": self.ok, "max_orbit_min": self.max_orbit_min,
                "witness_bag": list(self.witness_bag), "exch_report": self.exch_report.to_dict()}


def exchangeability_flatness(E: FnTable, tol: float = TOL_EXCH) -> FlatnessReport:
    """For an exchangeability e-variable, the minimum over orderings of each bag is at most 1.

    This is the finite form of "exchangeability deficiency of a bag is
    zero": some ordering of every bag carries no evidence.
    """
    exch = check_e_exchangeable(E, tol)
    if not exch.ok:
        raise ValueError(f"table is not an exchangeability e-variable (worst orbit mean {exch.worst_value})")
    bags, inverse = bag_index(E.space.z_card, E.N)
    mins = np.full(bags.shape[0], np.inf)
    np.minimum.at(mins, inverse, E.to_float().flat())
    worst = int(np.argmax(mins))
    return FlatnessReport(bool(mins.max() <= 1.0 + tol), float(mins[worst]),
                          tuple(int(c) for c in bags[worst]), exch)


@dataclass
class LimitationReport:
    n: int
    min_p: float
    floor: float
    separating: bool
    ok: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def limitation_check(A: NonconformityMeasure, n: int, budget: int = DEFAULT_BUDGET) -> LimitationReport:
    """Smallest conformal p-value over all datasets and candidate labels.

    It is never below ``1/(n+1)``, and equals it whenever some bag has a
    singleton member with strictly the largest score.
    """
    N = n + 1
    check_budget(A.space.z_card, N, budget)
    table = as_table(A, n, "p")
    min_p = float(table.flat().min())
    floor = 1.0 / N
    bags, _ = bag_index(A.space.z_card, N)
    separating = False
    for row in bags:
        counts = tuple(int(c) for c in row)
        members = [z for z in range(len(counts)) if counts[z]]
        scores = {z: A(counts, z) for z in members}
        top = max(scores.values())
        leaders = [z for z in members if scores[z] == top]
        if len(leaders) == 1 and counts[leaders[0]] == 1:
            separating = True
            break
    ok = min_p >= floor and (not separating or min_p == floor)
    return LimitationReport(n, min_p, floor, separating, ok)


# -- Monte Carlo coverage ----------------------------------------------------


@dataclass
class CoverageReport:
    epsilon: float
    trials: int
    smoothed: bool
    errors: int
    miscoverage: float
    sigma: float
    ok: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, trial)``."""
    return np.random.Generator(np.random.Philox(key=[seed, trial]))


class _RankCache:
    """Per bag: counts of members scoring strictly above / equal to each member."""

    def __init__(self, A: NonconformityMeasure):
        self.A = A
        self._cache: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}

    def __call__(self, counts: tuple[int, ...]):
        if counts not in self._cache:
            c = np.array(counts)
            members = np.flatnonzero(c)
            alpha = np.full(c.size, np.nan)
            alpha[members] = [self.A(counts, int(z)) for z in members]
            gt = np.zeros(c.size)
            eq = np.zeros(c.size)
            for z in members:
                gt[z] = c[members][alpha[members] > alpha[z]].sum()
                eq[z] = c[members][alpha[members] == alpha[z]].sum()
            self._cache[counts] = (gt, eq)
        return self._cache[counts]


def mc_coverage(A: NonconformityMeasure, Q: Distribution, n: int, epsilon: float,
                trials: int = 100_000, seed: int = 0, smoothed: bool = True) -> CoverageReport:
    """Empirical miscoverage of conformal prediction sets on IID data from ``Q``.

    The true label is missed exactly when its p-value is at most ``epsilon``,
    so only that p-value is needed per trial.  Smoothed prediction should
    match ``epsilon`` within three binomial standard errors; deterministic
    prediction should not exceed it by more.
    """
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    z_card = A.space.z_card
    if Q.z_card != z_card:
        raise ValueError(f"distribution has {Q.z_card} outcomes, space has {z_card}")
    N = n + 1
    cdf = np.cumsum(Q.as_array())
    cdf[-1] = 1.0
    ranks = _RankCache(A)
    errors = 0
    for t in range(trials):
        u = trial_rng(seed, t).random(N + 1)
        seq = np.searchsorted(cdf, u[:N], side="right")
        counts = tuple(int(c) for c in np.bincount(seq, minlength=z_card))
        gt, eq = ranks(counts)
        z = seq[-1]
        p = (gt[z] + (u[N] if smoothed else 1.0) * eq[z]) / N
        errors += p <= epsilon
    miscoverage = float(errors) / trials
    sigma = math.sqrt(epsilon * (1 - epsilon) / trials)
    if smoothed:
        ok = abs(miscoverage - epsilon) <= 3 * sigma
    else:
        ok = miscoverage <= epsilon + 3 * sigma
    return CoverageReport(epsilon, trials, smoothed, int(errors), miscoverage, sigma, bool(ok))
