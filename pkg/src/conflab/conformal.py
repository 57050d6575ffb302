"""Conformal predictors and conformal e-predictors over a finite observation space.

A nonconformity measure scores a member of the augmented bag (training
observations plus the candidate test observation).  Because the score sees
only the bag's counts, every predictor built here is train-invariant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .space import Bag, FnTable, ObservationSpace, bag_index, bag_of, check_budget


class NonconformityMeasure:
    """Score ``(bag counts, member observation) -> nonnegative real``, memoized."""

    name = "custom"
    binary = False

    def __init__(self, space: ObservationSpace):
        self.space = space
        self._cache: dict[tuple[tuple[int, ...], int], float] = {}

    def score(self, counts: tuple[int, ...], member: int) -> float:
        raise NotImplementedError

    def __call__(self, bag: Bag | Sequence[int], member: int) -> float:
        counts = bag.counts if isinstance(bag, Bag) else tuple(int(c) for c in bag)
        if counts[member] < 1:
            raise ValueError(f"observation {member} is not in the bag {counts}")
        key = (counts, member)
        if key not in self._cache:
            value = float(self.score(counts, member))
            if value < 0 or math.isnan(value):
                raise ValueError(f"nonconformity score must be nonnegative, got {value}")
            self._cache[key] = value
        return self._cache[key]


class ConstantScore(NonconformityMeasure):
    name = "constant"

    def __init__(self, space: ObservationSpace, value: float = 1.0):
        super().__init__(space)
        self.value = value

    def score(self, counts, member):
        return self.value


class BinaryScore(NonconformityMeasure):
    """Scores 1 for "support vectors" and 0 otherwise.

    By default an observation is a support vector when its label is not the
    strict majority among bag members sharing its object.  Any other rule
    ``(counts, member) -> bool`` may be supplied.
    """

    name = "binary"
    binary = True

    def __init__(self, space: ObservationSpace, rule: Callable[[tuple[int, ...], int], bool] | None = None):
        super().__init__(space)
        self.rule = rule

    def score(self, counts, member):
        if self.rule is not None:
            return 1.0 if self.rule(counts, member) else 0.0
        x, y = self.space.decode(member)
        own = counts[member]
        others = (counts[self.space.encode(x, yy)] for yy in range(self.space.y_card) if yy != y)
        return 0.0 if all(own > c for c in others) else 1.0


class KNNScore(NonconformityMeasure):
    """Nearest same-label distance relative to nearest other-label distance.

    Objects are integer-coded and compared by ``|x - x'|``.  With ``d_s`` and
    ``d_o`` the two distances (to the other bag members), the score is
    ``d_s / (d_s + d_o)``, a bounded increasing transform of ``d_s / d_o``;
    ``0/0`` and ``inf/inf`` give 1/2, a missing same-label neighbour gives 1
    and a missing other-label neighbour gives 0.
    """

    name = "knn"

    def score(self, counts, member):
        x, y = self.space.decode(member)
        rest = list(counts)
        rest[member] -= 1
        d_same, d_other = math.inf, math.inf
        for z, c in enumerate(rest):
            if c == 0:
                continue
            xz, yz = self.space.decode(z)
            d = abs(xz - x)
            if yz == y:
                d_same = min(d_same, d)
            else:
                d_other = min(d_other, d)
        if d_same == d_other:
            return 0.5
        if math.isinf(d_same):
            return 1.0
        if math.isinf(d_other):
            return 0.0
        return d_same / (d_same + d_other)


class TableScore(NonconformityMeasure):
    """Scores looked up from explicit ``(bag counts, member) -> score`` entries."""

    name = "custom"

    def __init__(self, space: ObservationSpace, entries: Mapping[tuple[tuple[int, ...], int], float]):
        super().__init__(space)
        self.entries = dict(entries)

    def score(self, counts, member):
        try:
            return self.entries[(counts, member)]
        except KeyError:
            raise KeyError(f"no custom score for bag {list(counts)}, member {member}") from None

    @classmethod
    def load(cls, space: ObservationSpace, path: str | Path) -> "TableScore":
        """Read a JSON list of ``{"bag_counts": [...], "member": z, "score": s}``."""
        raw = json.loads(Path(path).read_text())
        entries = {}
        for item in raw:
            counts = tuple(int(c) for c in item["bag_counts"])
            if len(counts) != space.z_card:
                raise ValueError(f"bag_counts {counts} does not match space {space}")
            entries[(counts, int(item["member"]))] = float(item["score"])
        return cls(space, entries)


SCORES = {"binary": BinaryScore, "knn": KNNScore, "constant": ConstantScore}


def make_score(name: str, space: ObservationSpace, path: str | Path | None = None) -> NonconformityMeasure:
    if name == "custom":
        if path is None:
            raise ValueError("the custom score needs a score file")
        return TableScore.load(space, path)
    try:
        return SCORES[name](space)
    except KeyError:
        raise ValueError(f"unknown score {name!r}; choose from binary, knn, custom") from None


# -- single predictions ------------------------------------------------------


def conformal_scores(A: NonconformityMeasure, train: Sequence[int], x: int, y: int) -> np.ndarray:
    """Scores of the augmented sequence; the candidate's score is last."""
    test = A.space.encode(x, y)
    seq = list(train) + [test]
    bag = bag_of(seq, A.space.z_card)
    return np.array([A(bag, z) for z in seq])


def conformal_p(A: NonconformityMeasure, train: Sequence[int], x: int, y: int,
                tau: float | None = None) -> float:
    """Conformal p-value of label ``y`` for object ``x``; smoothed when ``tau`` is given."""
    alphas = conformal_scores(A, train, x, y)
    a = alphas[-1]
    N = alphas.size
    if tau is None:
        return float(np.count_nonzero(alphas >= a)) / N
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return (np.count_nonzero(alphas > a) + tau * np.count_nonzero(alphas == a)) / N


def conformal_e(A: NonconformityMeasure, train: Sequence[int], x: int, y: int) -> float:
    """Conformal e-value ``(n+1) * alpha_test / sum(alpha)`` with ``0/0 := 1``."""
    alphas = conformal_scores(A, train, x, y)
    total = alphas.sum()
    if total == 0:
        return 1.0
    return alphas.size * alphas[-1] / total


def binary_conformal(A: NonconformityMeasure, train: Sequence[int], x: int, y: int) -> tuple[float, float]:
    alphas = conformal_scores(A, train, x, y)
    if not np.isin(alphas, (0.0, 1.0)).all():
        raise ValueError("binary conformal prediction needs scores in {0, 1}")
    return conformal_p(A, train, x, y), conformal_e(A, train, x, y)


@dataclass(frozen=True)
class ConformalOutput:
    p: dict[int, float]
    e: dict[int, float]
    smoothed_p: dict[int, float] | None = None


def conformal_predict(A: NonconformityMeasure, train: Sequence[int], x: int,
                      tau: float | None = None) -> ConformalOutput:
    labels = range(A.space.y_card)
    return ConformalOutput(
        p={y: conformal_p(A, train, x, y) for y in labels},
        e={y: conformal_e(A, train, x, y) for y in labels},
        smoothed_p=None if tau is None else {y: conformal_p(A, train, x, y, tau) for y in labels},
    )


def prediction_set(p_map: Mapping[int, float], epsilon: float) -> set[int]:
    """Labels whose p-value exceeds the significance level."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"significance level must lie in [0, 1), got {epsilon}")
    return {y for y, p in p_map.items() if p > epsilon}


# -- tables ------------------------------------------------------------------


def _bag_member_matrix(A: NonconformityMeasure, N: int):
    """Per bag: ``gt[b, z]``, ``eq[b, z]`` (member counts with larger / equal score) and ``e[b, z]``."""
    bags, inverse = bag_index(A.space.z_card, N)
    B, Z = bags.shape
    gt = np.zeros((B, Z))
    eq = np.zeros((B, Z))
    ev = np.ones((B, Z))
    for b, row in enumerate(bags):
        counts = tuple(int(c) for c in row)
        members = [z for z in range(Z) if counts[z] > 0]
        alpha = {z: A(counts, z) for z in members}
        total = sum(counts[z] * alpha[z] for z in members)
        for z in members:
            gt[b, z] = sum(counts[w] for w in members if alpha[w] > alpha[z])
            eq[b, z] = sum(counts[w] for w in members if alpha[w] == alpha[z])
            ev[b, z] = 1.0 if total == 0 else N * alpha[z] / total
    return bags, inverse, gt, eq, ev


def as_table(A: NonconformityMeasure, n: int, kind: str = "p", tau=None) -> FnTable:
    """Tabulate a conformal predictor over ``Z^(n+1)``, last coordinate as the test observation.

    ``kind`` is ``"p"`` (deterministic p-values), ``"e"`` or ``"smoothed"``;
    the smoothed table takes ``tau`` as a scalar or as an array with one
    draw per sequence.
    """
    space = A.space
    N = n + 1
    check_budget(space.z_card, N)
    bags, inverse, gt, eq, ev = _bag_member_matrix(A, N)
    last = np.indices((space.z_card,) * N)[-1].reshape(-1)
    if kind == "p":
        values = (gt + eq)[inverse, last] / N
    elif kind == "e":
        values = ev[inverse, last]
    elif kind == "smoothed":
        if tau is None:
            raise ValueError("smoothed tables need tau")
        tau = np.broadcast_to(np.asarray(tau, dtype=float).reshape(-1) if np.ndim(tau) else tau,
                              last.shape)
        values = (gt[inverse, last] + tau * eq[inverse, last]) / N
    else:
        raise ValueError(f"unknown table kind {kind!r}")
    return FnTable(space, n, values)


def smoothed_orbit_cdf(A: NonconformityMeasure, bag: Bag, epsilon: float) -> float:
    """Exact ``Pr(smoothed p <= epsilon)`` under the orbit-uniform measure of ``bag`` and ``tau ~ U(0,1)``."""
    counts = bag.counts
    N = bag.N
    members = bag.members()
    alpha = {z: A(counts, z) for z in members}
    total = 0.0
    for z in members:
        gt = sum(counts[w] for w in members if alpha[w] > alpha[z])
        eq = sum(counts[w] for w in members if alpha[w] == alpha[z])
        # p = (gt + tau * eq) / N <= eps  iff  tau <= (eps * N - gt) / eq
        total += counts[z] / N * min(1.0, max(0.0, (epsilon * N - gt) / eq))
    return total


def realized_levels(A: NonconformityMeasure, bag: Bag) -> list[float]:
    """Deterministic conformal p-values realized on the orbit of ``bag``."""
    counts = bag.counts
    members = bag.members()
    alpha = {z: A(counts, z) for z in members}
    return sorted({sum(counts[w] for w in members if alpha[w] >= alpha[z]) / bag.N for z in members})
