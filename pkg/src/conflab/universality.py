"""Decomposition of IID e-variables and the reductions from IID to conformal prediction.

The existence claims (Kolmogorov step, train-invariance step) are verified
per instance through pointwise-minimal witnesses: any valid witness
dominates the minimal one and the classes involved are downward closed, so
the minimal witness is valid exactly when some witness exists.

Chains run in exact rational arithmetic.  The irrational pieces enter only
through one-sided rational bounds: ``E_LOWER <= e`` and calibrated values
rounded upward, so a passing pointwise comparison implies the real one.
Inequalities ``A >= c B / C`` are compared cross-multiplied as ``A C >= c B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .calibration import power_calibrator
from .oracles import (
    TOL_EXCH,
    TOL_IID,
    CheckReport,
    check_e_exchangeable,
    check_e_iid,
    check_fully_invariant,
    check_p_exchangeable,
    check_p_iid,
    check_test_conditional,
    check_train_invariant,
)
from .simplex import IIDPolynomial, sup_iid
from .space import FnTable, permutation_mean

# float(e) rounds down: 2.718281828459045090... < e = 2.718281828459045235...
E_LOWER = Fraction(math.e)


class ChainStageError(RuntimeError):
    """A stage of a reduction failed its oracle check."""

    def __init__(self, stage: str, report: CheckReport | None, message: str = ""):
        self.stage = stage
        self.report = report
        witness = None if report is None else report.witness
        super().__init__(f"stage {stage!r} failed{': ' + message if message else ''} (witness: {witness})")


def _div_zero_one(a, b):
    # 0/0 := 1, c/0 := inf
    if b == 0:
        return Fraction(1) if a == 0 else math.inf
    return a / b


_ratio = np.frompyfunc(_div_zero_one, 2, 1)


def _ratio_table(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    if num.dtype == object or den.dtype == object:
        return _ratio(num, den)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    out = np.where((num == 0) & (den == 0), 1.0, out)
    return np.where((num > 0) & (den == 0), np.inf, out)


def _label_view(values: np.ndarray, space) -> np.ndarray:
    return values.reshape(values.shape[:-1] + (space.x_card, space.y_card))


def max_over_false_labels(table: FnTable) -> np.ndarray:
    """``M[z_1..z_n, (x, y_t)] = max_{y != y_t} table(z_1..z_n, (x, y))``."""
    space = table.space
    view = _label_view(table.values, space)
    out = np.empty_like(view)
    for yt in range(space.y_card):
        out[..., yt] = np.delete(view, yt, axis=-1).max(axis=-1)
    return out.reshape(table.values.shape)


def _pairs(table: FnTable, values: np.ndarray | None = None):
    """Views for comparing ``T(z_1..z_n, x, y)`` (false label) with ``S(z)`` (true label).

    Returns ``(false_view, true_view, mask)`` broadcastable to
    ``(..., x, y_true, y_false)``; ``mask`` selects ``y_false != y_true``.
    """
    space = table.space
    v = table.values if values is None else values
    lab = _label_view(v, space)
    false_view = lab[..., :, None, :]
    true_view = lab[..., :, :, None]
    mask = ~np.eye(space.y_card, dtype=bool)
    return false_view, true_view, mask


def _false_view(table: FnTable):
    return _pairs(table)[0]


def _true_view(table: FnTable):
    return _pairs(table)[1]


def _exact(table: FnTable) -> FnTable:
    return table.to_exact()


# -- averaging ---------------------------------------------------------------


def permutation_average(E: FnTable) -> FnTable:
    """Average of ``E`` over all ``(n+1)!`` reorderings; fully invariant."""
    return E.with_values(permutation_mean(E.values, range(E.N)))


def train_average(E: FnTable) -> FnTable:
    """Average over the ``n!`` orderings of the training part, test position fixed."""
    return E.with_values(permutation_mean(E.values, range(E.n)))


# -- decomposition -------------------------------------------------------------


@dataclass
class Decomposition:
    E_exch: FnTable
    F_inv: FnTable
    exch_report: CheckReport
    iid_report: CheckReport
    invariant: bool
    reconstructs: bool

    @property
    def ok(self) -> bool:
        return self.exch_report.ok and self.iid_report.ok and self.invariant and self.reconstructs


def decompose(E: FnTable, check_input: bool = True, tol_exch: float = TOL_EXCH,
              tol_iid: float = TOL_IID) -> Decomposition:
    """Split an IID e-variable into an exchangeability factor and an invariant IID factor.

    ``F`` is the permutation average of ``E`` and ``E' = E / F`` with
    ``0/0 := 1``.  Float input is converted losslessly to rationals, so the
    factors are exact and ``E' F = E`` holds exactly where ``F > 0``.
    """
    if check_input:
        rep = check_e_iid(E, tol_iid)
        if not rep.ok:
            raise ChainStageError("input", rep, "table is not an IID e-variable")
    E = _exact(E)
    F = permutation_average(E)
    E_exch = E.with_values(_ratio_table(E.values, F.values))
    positive = F.values > 0
    recon = E_exch.values * F.values
    reconstructs = bool(np.all((recon == E.values) | ~positive)) and bool(np.all(E.values[~positive] == 0))
    return Decomposition(
        E_exch, F,
        check_e_exchangeable(E_exch, tol_exch),
        check_e_iid(F, tol_iid),
        check_fully_invariant(F),
        reconstructs,
    )


def product_embed(E_exch: FnTable, F_inv: FnTable, tol_exch: float = TOL_EXCH,
                  tol_iid: float = TOL_IID) -> tuple[FnTable, CheckReport]:
    """Pointwise product of an exchangeability e-variable and an invariant IID e-variable."""
    rep = check_e_exchangeable(E_exch, tol_exch)
    if not rep.ok:
        raise ChainStageError("E_exch", rep, "factor is not an exchangeability e-variable")
    if not check_fully_invariant(F_inv):
        raise ChainStageError("F_inv", None, "factor is not fully invariant")
    rep = check_e_iid(F_inv, tol_iid)
    if not rep.ok:
        raise ChainStageError("F_inv", rep, "factor is not an IID e-variable")
    product = E_exch.with_values(E_exch.values * F_inv.values)
    return product, check_e_iid(product, tol_iid)


# -- minimal witnesses ----------------------------------------------------------


def kolmogorov_scale(y_card: int, exact: bool):
    if exact:
        return 1 / (E_LOWER * (y_card - 1))
    return 1.0 / (math.e * (y_card - 1))


def minimal_G_kolmogorov(F: FnTable, check_input: bool = False, tol_iid: float = TOL_IID
                         ) -> tuple[FnTable, CheckReport]:
    """Smallest ``G`` with ``G(z) >= F(z_1..z_n, x, y) / (e (|Y|-1))`` for every false label ``y``.

    ``G`` is an IID e-variable iff the Kolmogorov step holds for ``F``; the
    returned report is ``check_e_iid(G)``.  For exact ``F`` the constant uses
    the rational lower bound of ``e`` so that ``G`` is never below the real minimum.
    """
    if check_input:
        if not check_fully_invariant(F):
            raise ChainStageError("input", None, "F is not fully invariant")
        rep = check_e_iid(F, tol_iid)
        if not rep.ok:
            raise ChainStageError("input", rep, "F is not an IID e-variable")
    G = F.with_values(max_over_false_labels(F) * kolmogorov_scale(F.space.y_card, F.is_exact))
    return G, check_e_iid(G, tol_iid)


def minimal_G_traininv(E: FnTable, check_input: bool = False, tol_exch: float = TOL_EXCH
                       ) -> tuple[FnTable, CheckReport]:
    """Smallest test-conditional ``G`` with ``Ebar >= E / ((|Y|-1) G)`` for every false label.

    ``G(z_1..z_n | x, y_t) = max_{y != y_t} (E / Ebar)(z_1..z_n, x, y) / (|Y|-1)``
    with ``0/0 := 1``.  The report is ``check_test_conditional(G)``.
    """
    if check_input:
        rep = check_e_exchangeable(E, tol_exch)
        if not rep.ok:
            raise ChainStageError("input", rep, "E is not an exchangeability e-variable")
    Ebar = train_average(E)
    ratio = E.with_values(_ratio_table(E.values, Ebar.values))
    scale = Fraction(1, E.space.y_card - 1) if E.is_exact else 1.0 / (E.space.y_card - 1)
    G = E.with_values(max_over_false_labels(ratio) * scale)
    return G, check_test_conditional(G, tol_exch)


def kolmogorov_constant(F: FnTable) -> float:
    """``sup_Q E_Q[max_{y != y_t} F(.., x, y)]``: the least ``c`` making that table over ``c`` an IID e-variable.

    The Kolmogorov step bounds it by ``e (|Y| - 1)`` for invariant IID ``F``.
    """
    M = F.to_float().with_values(max_over_false_labels(F.to_float()))
    return sup_iid(IIDPolynomial.from_table(M)).value


# -- pointwise comparisons --------------------------------------------------


@dataclass
class PointwiseCheck:
    holds: bool
    violations: int
    worst_ratio: float
    cells: int


def _compare_ge(lhs: np.ndarray, rhs: np.ndarray, mask: np.ndarray) -> PointwiseCheck:
    """Exact ``lhs >= rhs`` on all masked cells; ``worst_ratio`` is ``min lhs/rhs`` over cells with ``rhs > 0``."""
    lhs, rhs = np.broadcast_arrays(lhs, rhs)
    full_mask = np.broadcast_to(mask, lhs.shape)
    l = lhs[full_mask]
    r = rhs[full_mask]
    ok = np.array([a >= b for a, b in zip(l, r)], dtype=bool)
    ratios = [float(a) / float(b) if b > 0 else math.inf for a, b in zip(l, r)]
    return PointwiseCheck(bool(ok.all()), int((~ok).sum()), min(ratios, default=math.inf), int(l.size))


@dataclass
class KolmogorovChain:
    E_exch: FnTable
    G: FnTable
    decomposition: Decomposition
    G_report: CheckReport
    pointwise: PointwiseCheck

    @property
    def verified(self) -> bool:
        return self.decomposition.ok and self.G_report.ok and self.pointwise.holds


def corollary_kolmogorov_chain(E: FnTable, check_input: bool = True, tol_exch: float = TOL_EXCH,
                               tol_iid: float = TOL_IID) -> KolmogorovChain:
    """Exchangeability e-predictor ``E'`` and IID e-variable ``G`` with ``E'(.., y) >= E(.., y) / (e (|Y|-1) G)``.

    Checked exactly as ``E'(.., y) * e (|Y|-1) * G(z) >= E(.., y)`` over every
    sequence and every false label ``y``.
    """
    if check_input:
        rep = check_e_iid(E, tol_iid)
        if not rep.ok:
            raise ChainStageError("input", rep, "table is not an IID e-variable")
    Ex = _exact(E)
    dec = decompose(Ex, check_input=False, tol_exch=tol_exch, tol_iid=tol_iid)
    G, G_rep = minimal_G_kolmogorov(dec.F_inv, tol_iid=tol_iid)
    _, true_G, mask = _pairs(G)
    lhs = _false_view(dec.E_exch) * true_G * (E_LOWER * (E.space.y_card - 1))
    point = _compare_ge(lhs, _false_view(Ex), mask)
    return KolmogorovChain(dec.E_exch, G, dec, G_rep, point)


# -- p-value chains -------------------------------------------------------------


@dataclass
class ChainCertificate:
    mode: str
    delta: float
    y_card: int
    constant: float
    P_conformal: FnTable
    G_iid: FnTable
    stage_reports: dict[str, CheckReport]
    pointwise: PointwiseCheck
    multiplier: FnTable = field(repr=False)
    """Exact ``c * G^2`` (full) or ``c * G`` (train-invariant) with the lower bound of ``e``."""

    @property
    def verified(self) -> bool:
        return self.pointwise.holds and all(r.ok for r in self.stage_reports.values())

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "delta": self.delta,
            "y_card": self.y_card,
            "constant": self.constant,
            "verified": self.verified,
            "pointwise": {
                "holds": self.pointwise.holds,
                "violations": self.pointwise.violations,
                "cells": self.pointwise.cells,
                "worst_slack_ratio": _finite_or_str(self.pointwise.worst_ratio),
            },
            "stages": {k: v.to_dict() for k, v in self.stage_reports.items()},
        }


def _finite_or_str(x: float):
    return x if math.isfinite(x) else "inf"


def _calibrated_upper(P: FnTable, delta: float) -> FnTable:
    """Exact table ``>= delta * P^(delta-1)`` (float result nudged up past its rounding error)."""
    vals = power_calibrator(delta)(P.to_float().values)
    out = np.empty(vals.shape, dtype=object)
    for idx, v in np.ndenumerate(vals):
        if not math.isfinite(v):
            raise ValueError("p-table has zeros; an IID p-variable is positive everywhere")
        for _ in range(4):
            v = math.nextafter(v, math.inf)
        out[idx] = Fraction(v)
    return P.with_values(out)


def _min_one_over(E: FnTable) -> FnTable:
    f = np.frompyfunc(lambda e: Fraction(1) if e <= 1 else 1 / e, 1, 1)
    return E.with_values(f(E.values))


def _require(stage: str, report: CheckReport, reports: dict[str, CheckReport]) -> None:
    reports[stage] = report
    if not report.ok:
        raise ChainStageError(stage, report)


def _invariance_report(name: str, holds: bool) -> CheckReport:
    return CheckReport(name, holds, 0.0 if holds else 1.0, None, 0.0, bound=0.0)


def _check_p_input(P: FnTable, delta: float, tol_iid: float, reports, check_input: bool):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    vals = P.to_float().values
    if (vals <= 0).any() or (vals > 1).any():
        raise ValueError("p-table must take values in (0, 1]")
    if check_input:
        _require("input_PR", check_p_iid(P, tol=tol_iid), reports)


def full_p_chain(P: FnTable, delta: float, check_input: bool = True,
                 tol_exch: float = TOL_EXCH, tol_iid: float = TOL_IID) -> ChainCertificate:
    """Reduce an IID p-predictor to a conformal predictor ``P'`` and an IID e-variable ``G``.

    Stages: power calibration, decomposition plus Kolmogorov witness ``G1``,
    train averaging plus its witness ``G2``, e-to-p calibration;
    ``G = sqrt(G1 G2)``.  The certificate checks
    ``P'(.., y) <= e (|Y|-1)^2 / delta * G(z)^2 * P(.., y)^(1-delta)`` for every
    sequence and false label, exactly, using
    ``P^(1-delta) >= delta / E_up`` where ``E_up >= delta P^(delta-1)``.
    """
    reports: dict[str, CheckReport] = {}
    _check_p_input(P, delta, tol_iid, reports, check_input)
    k = P.space.y_card - 1
    E = _calibrated_upper(P, delta)
    _require("calibrated_ER", check_e_iid(E, tol_iid), reports)

    dec = decompose(E, check_input=False, tol_exch=tol_exch, tol_iid=tol_iid)
    _require("E_exch_EX", dec.exch_report, reports)
    _require("F_EiR", dec.iid_report, reports)
    _require("F_invariant", _invariance_report("invariant", dec.invariant), reports)
    G1, rep = minimal_G_kolmogorov(dec.F_inv, tol_iid=tol_iid)
    _require("G1_ER", rep, reports)

    E2 = train_average(dec.E_exch)
    _require("E2_EX", check_e_exchangeable(E2, tol_exch), reports)
    _require("E2_train_invariant", _invariance_report("train-invariant", check_train_invariant(E2)), reports)
    G2, rep = minimal_G_traininv(dec.E_exch, tol_exch=tol_exch)
    _require("G2_test_conditional", rep, reports)

    P_conf = _min_one_over(E2)
    _require("P_conformal_PX", check_p_exchangeable(P_conf, tol_exch), reports)
    _require("P_conformal_train_invariant",
             _invariance_report("train-invariant", check_train_invariant(P_conf)), reports)

    G_sq = G1.values * G2.values
    G = G1.to_float().with_values(np.sqrt(G1.to_float().values * G2.to_float().values))
    _require("G_ER", check_e_iid(G, tol_iid), reports)

    multiplier = E_LOWER * k * k / Fraction(delta) * G_sq
    # P' E_up <= e_lo k^2 G1 G2   <=>   P' <= (e_lo k^2 / delta) G^2 (delta / E_up)
    _, true_mult, mask = _pairs(P, G_sq * (E_LOWER * k * k))
    lhs = true_mult
    rhs = _false_view(P_conf) * _false_view(E)
    point = _compare_ge(lhs, rhs, mask)
    return ChainCertificate("full", delta, P.space.y_card, math.e * k * k / delta,
                            P_conf.to_float(), G, reports, point, P.with_values(multiplier))


def train_invariant_p_chain(P: FnTable, delta: float, check_input: bool = True,
                            tol_exch: float = TOL_EXCH, tol_iid: float = TOL_IID) -> ChainCertificate:
    """Reduction for a train-invariant IID p-predictor; the train-averaging stage is skipped.

    Certifies ``P'(.., y) <= e (|Y|-1) / delta * G(z) * P(.., y)^(1-delta)``.
    """
    reports: dict[str, CheckReport] = {}
    if not check_train_invariant(P):
        raise ChainStageError("input", None, "p-table is not train-invariant")
    _check_p_input(P, delta, tol_iid, reports, check_input)
    k = P.space.y_card - 1
    E = _calibrated_upper(P, delta)
    _require("calibrated_ER", check_e_iid(E, tol_iid), reports)

    dec = decompose(E, check_input=False, tol_exch=tol_exch, tol_iid=tol_iid)
    _require("E_exch_EX", dec.exch_report, reports)
    _require("F_EiR", dec.iid_report, reports)
    _require("F_invariant", _invariance_report("invariant", dec.invariant), reports)
    G1, rep = minimal_G_kolmogorov(dec.F_inv, tol_iid=tol_iid)
    _require("G_ER", rep, reports)

    P_conf = _min_one_over(dec.E_exch)
    _require("P_conformal_PX", check_p_exchangeable(P_conf, tol_exch), reports)
    _require("P_conformal_train_invariant",
             _invariance_report("train-invariant", check_train_invariant(P_conf)), reports)

    multiplier = E_LOWER * k / Fraction(delta) * G1.values
    _, true_mult, mask = _pairs(P, G1.values * (E_LOWER * k))
    point = _compare_ge(true_mult, _false_view(P_conf) * _false_view(E), mask)
    return ChainCertificate("traininv", delta, P.space.y_card, math.e * k / delta,
                            P_conf.to_float(), G1.to_float(), reports, point, P.with_values(multiplier))


@dataclass
class BoundComparison:
    constant_ratio: float
    at_least_as_tight: bool
    min_ratio: float
    max_ratio: float


def compare_chain_bounds(full: ChainCertificate, traininv: ChainCertificate) -> BoundComparison:
    """Compare the two certified upper bounds on ``P'`` for the same train-invariant ``P``.

    Both bounds share the factor ``P^(1-delta)``, so the comparison is between
    the exact multipliers ``c G^2`` and ``c G``.
    """
    a = full.multiplier.values.reshape(-1)
    b = traininv.multiplier.values.reshape(-1)
    tighter = all(t <= f for t, f in zip(b, a))
    ratios = [float(f) / float(t) for t, f in zip(b, a) if t > 0]
    return BoundComparison(full.constant / traininv.constant, tighter,
                           min(ratios, default=math.nan), max(ratios, default=math.nan))
