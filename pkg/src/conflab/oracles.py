"""Exact and numerical membership checks for the confidence-predictor classes.

Exchangeability checks reduce to orbit-uniform measures (the extreme points
of the exchangeable measures on ``Z^N``) and are exact up to floating
accumulation.  IID checks maximize a polynomial over the simplex and report
the maximizing distribution as witness.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .simplex import IIDPolynomial, monomial_matrix, start_points, sup_iid
from .space import (
    Bag,
    FnTable,
    bag_index,
    orbit_means,
    permutation_mean,
)

TOL_EXCH = 1e-9
TOL_IID = 1e-6


class ClassLabel(str, enum.Enum):
    PR = "PR"
    PX = "PX"
    PtR = "PtR"
    PtX = "PtX"
    ER = "ER"
    EX = "EX"
    EtR = "EtR"
    EtX = "EtX"
    EiR = "EiR"
    TestCondEX = "TestCondEX"

    @property
    def is_p(self) -> bool:
        return self.value.startswith("P")

    @property
    def is_iid(self) -> bool:
        return self.value.endswith("R")


@dataclass
class CheckReport:
    class_label: str
    ok: bool
    worst_value: float
    witness: Any
    tolerance: float
    bound: float = 1.0
    converged: bool = True
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.ok = bool(self.ok)
        self.worst_value = float(self.worst_value)

    def to_dict(self) -> dict:
        return {
            "class": self.class_label,
            "ok": bool(self.ok),
            "worst_value": _json_float(self.worst_value),
            "witness": _json_witness(self.witness),
            "tolerance": self.tolerance,
            "bound": _json_float(self.bound),
            "converged": bool(self.converged),
            "notes": list(self.notes),
        }


def _json_float(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _json_witness(w):
    if isinstance(w, Bag):
        return {"bag": list(w.counts)}
    if isinstance(w, dict):
        return {k: _json_witness(v) for k, v in w.items()}
    if isinstance(w, (tuple, list, np.ndarray)):
        return [_json_witness(v) for v in w]
    if isinstance(w, (float, np.floating)):
        return _json_float(w)
    if isinstance(w, np.integer):
        return int(w)
    return w


def _float_values(table: FnTable) -> np.ndarray:
    return table.to_float().values


# -- invariance ------------------------------------------------------------


def _invariant_under(values: np.ndarray, axes: Sequence[int]) -> bool:
    axes = list(axes)
    if len(axes) <= 1:
        return True
    base = list(range(values.ndim))
    # adjacent transpositions generate the symmetric group
    for a, b in zip(axes, axes[1:]):
        order = base.copy()
        order[a], order[b] = order[b], order[a]
        if not np.array_equal(values, np.transpose(values, order)):
            return False
    return True


def check_train_invariant(table: FnTable) -> bool:
    """Exact equality under all permutations of the ``n`` training positions."""
    return _invariant_under(table.values, range(table.n))


def check_fully_invariant(table: FnTable) -> bool:
    """Exact equality under all permutations of the ``n + 1`` positions."""
    return _invariant_under(table.values, range(table.N))


# -- exchangeability -------------------------------------------------------


def check_e_exchangeable(table: FnTable, tol: float = TOL_EXCH) -> CheckReport:
    """Every orbit mean is at most 1 (within ``tol``); the worst bag is the witness."""
    bags, means = orbit_means(table.to_float())
    worst = int(np.argmax(means))
    worst_value = float(means[worst])
    return CheckReport(
        "EX", worst_value <= 1.0 + tol, worst_value, Bag(tuple(bags[worst])), tol
    )


def _orbit_level_fractions(values: np.ndarray, z_card: int, N: int):
    """For each bag and each value realized on its orbit, the orbit fraction at or below it.

    Yields ``(bag_row, levels, fractions)``.
    """
    bags, inverse = bag_index(z_card, N)
    flat = values.reshape(-1)
    order = np.lexsort((flat, inverse))
    sorted_bag = inverse[order]
    sorted_val = flat[order]
    boundaries = np.flatnonzero(np.diff(sorted_bag)) + 1
    for chunk_bag, chunk_val in zip(np.split(sorted_bag, boundaries), np.split(sorted_val, boundaries)):
        size = chunk_val.size
        levels = np.unique(chunk_val)
        last = np.searchsorted(chunk_val, levels, side="right")
        yield bags[chunk_bag[0]], levels, last / size


def check_p_exchangeable(table: FnTable, tol: float = TOL_EXCH) -> CheckReport:
    """For every bag and realized level ``eps``: orbit fraction with ``P <= eps`` is at most ``eps``.

    The orbit fraction is a step function of ``eps`` jumping only at realized
    values, so checking those levels is exact.
    """
    values = _float_values(table)
    _require_unit_interval(values)
    worst_excess, witness = -math.inf, None
    for bag_row, levels, fracs in _orbit_level_fractions(values, table.space.z_card, table.N):
        excess = fracs - levels
        i = int(np.argmax(excess))
        if excess[i] > worst_excess:
            worst_excess = float(excess[i])
            witness = {"bag": Bag(tuple(bag_row)), "epsilon": float(levels[i]),
                       "fraction": float(fracs[i])}
    return CheckReport("PX", worst_excess <= tol, worst_excess, witness, tol, bound=0.0)


def check_test_conditional(
    cond_table: FnTable | Callable[[tuple[int, ...], int], float],
    tol: float = TOL_EXCH,
    space=None,
    n: int | None = None,
) -> CheckReport:
    """Average over orderings of the training part, test observation fixed, is at most 1.

    ``cond_table`` is a table over ``Z^(n+1)`` whose last coordinate is the
    conditioning test observation, or a callable ``(train, test) -> value``
    (then ``space`` and ``n`` are required).
    """
    if not isinstance(cond_table, FnTable):
        if space is None or n is None:
            raise ValueError("space and n are required for a callable conditional table")
        fn = cond_table
        cond_table = FnTable.from_function(space, n, lambda s: fn(s[:-1], s[-1]))
    values = _float_values(cond_table)
    avg = permutation_mean(values, range(cond_table.n))
    flat_idx = int(np.argmax(avg))
    worst = float(avg.reshape(-1)[flat_idx])
    seq = np.unravel_index(flat_idx, avg.shape)
    witness = {"train": [int(z) for z in seq[:-1]], "test": int(seq[-1])}
    return CheckReport("TestCondEX", worst <= 1.0 + tol, worst, witness, tol)


# -- IID -------------------------------------------------------------------


def check_e_iid(table: FnTable | IIDPolynomial, tol: float = TOL_IID) -> CheckReport:
    """``sup_Q E_{Q^N}[table] <= 1`` (within ``tol``); the maximizing ``Q`` is the witness."""
    poly = table if isinstance(table, IIDPolynomial) else IIDPolynomial.from_table(table)
    res = sup_iid(poly)
    notes = [] if res.converged else ["optimizer did not converge; value is a lower bound"]
    return CheckReport("ER", res.value <= 1.0 + tol, res.value, res.q, tol,
                       converged=res.converged, notes=notes)


def check_p_iid(
    table: FnTable, eps_grid: Iterable[float] = (), tol: float = TOL_IID
) -> CheckReport:
    """``sup_Q Q^N(P <= eps) <= eps`` for every level in ``eps_grid`` and every realized value."""
    values = _float_values(table)
    _require_unit_interval(values)
    levels = np.unique(np.concatenate([values.reshape(-1), np.asarray(list(eps_grid), float)]))
    levels = levels[(levels >= 0) & (levels < 1)]
    if levels.size == 0:
        return CheckReport("PR", True, -math.inf, None, tol, bound=0.0)
    bags, inverse = bag_index(table.space.z_card, table.N)
    flat = values.reshape(-1)
    # batched grid scan: orbit counts below each level times monomials
    below = np.zeros((levels.size, bags.shape[0]))
    order = np.argsort(flat)
    sorted_vals = flat[order]
    for li, eps in enumerate(levels):
        k = np.searchsorted(sorted_vals, eps, side="right")
        np.add.at(below[li], inverse[order[:k]], 1.0)
    pts = start_points(table.space.z_card)
    grid_vals = below @ monomial_matrix(bags, pts)
    worst_excess, witness, converged = -math.inf, None, True
    for li, eps in enumerate(levels):
        excess_grid = float(grid_vals[li].max()) - eps
        if excess_grid > tol:
            q = pts[int(np.argmax(grid_vals[li]))]
            value, conv = excess_grid, True
        else:
            res = sup_iid(IIDPolynomial(bags, below[li]))
            q, value, conv = np.asarray(res.q), res.value - eps, res.converged
        converged &= conv
        if value > worst_excess:
            worst_excess = value
            witness = {"epsilon": float(eps), "q": tuple(float(x) for x in q),
                       "probability": float(value + eps)}
    notes = [] if converged else ["optimizer did not converge at some level"]
    return CheckReport("PR", worst_excess <= tol, worst_excess, witness, tol, bound=0.0,
                       converged=converged, notes=notes)


def _require_unit_interval(values: np.ndarray) -> None:
    if (values < 0).any() or (values > 1).any():
        raise ValueError("p-tables must take values in [0, 1]")


# -- dispatch --------------------------------------------------------------


def check_class(
    table: FnTable, label: ClassLabel | str, tol_exch: float = TOL_EXCH, tol_iid: float = TOL_IID
) -> CheckReport:
    """Membership of ``table`` in one class; invariance requirements are checked first."""
    label = ClassLabel(label)
    if label is ClassLabel.TestCondEX:
        return check_test_conditional(table, tol_exch)
    if label is ClassLabel.EiR and not check_fully_invariant(table):
        return CheckReport(label.value, False, math.nan, "not fully invariant", tol_iid)
    if label in (ClassLabel.PtR, ClassLabel.PtX, ClassLabel.EtR, ClassLabel.EtX) and not check_train_invariant(table):
        return CheckReport(label.value, False, math.nan, "not train-invariant",
                           tol_iid if label.is_iid else tol_exch)
    if label.is_p:
        rep = check_p_iid(table, tol=tol_iid) if label.is_iid else check_p_exchangeable(table, tol_exch)
    else:
        rep = check_e_iid(table, tol_iid) if label.is_iid else check_e_exchangeable(table, tol_exch)
    rep.class_label = label.value
    return rep
