"""p-to-e calibrators and e-to-p calibration."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .oracles import CheckReport
from .space import FnTable

INTEGRAL_TOL = 1e-6
MONOTONE_GRID = 10_000


@dataclass(frozen=True)
class Calibrator:
    """A decreasing map ``[0, 1] -> [0, inf]`` with integral at most 1.

    ``kind`` is ``"power"`` (parameter ``delta`` in (0, 1)), ``"kappa"``
    (parameter ``kappa > 0``) or ``"shafer"`` (no parameter).
    """

    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind == "power":
            if self.param is None or not 0.0 < self.param < 1.0:
                raise ValueError(f"power calibrator needs delta in (0, 1), got {self.param}")
        elif self.kind == "kappa":
            if self.param is None or not self.param > 0.0:
                raise ValueError(f"kappa calibrator needs kappa > 0, got {self.param}")
        elif self.kind != "shafer":
            raise ValueError(f"unknown calibrator kind {self.kind!r}")

    def __call__(self, p):
        p_arr = np.asarray(p, dtype=float)
        if (p_arr < 0).any() or (p_arr > 1).any():
            raise ValueError("calibrators take p-values in [0, 1]")
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if self.kind == "power":
                d = self.param
                out = np.where(p_arr > 0, d * np.power(np.where(p_arr > 0, p_arr, 1.0), d - 1), np.inf)
            elif self.kind == "shafer":
                out = np.where(p_arr > 0, np.power(np.where(p_arr > 0, p_arr, 1.0), -0.5) - 1.0, np.inf)
            else:
                k = self.param
                cut = math.exp(-1.0 - k)
                safe = np.where((p_arr > 0) & (p_arr <= cut), p_arr, cut)
                mid = k * (1 + k) ** k / safe * (-np.log(safe)) ** (-1 - k)
                out = np.where(p_arr == 0, np.inf, np.where(p_arr <= cut, mid, 0.0))
        return float(out) if np.ndim(p) == 0 else out

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (math.exp(-1.0 - self.param),) if self.kind == "kappa" else ()

    def exp_scale_integrand(self, s: float) -> float:
        """``f(exp(-s)) * exp(-s)``, evaluated without forming ``exp(-s)``."""
        if self.kind == "power":
            return self.param * math.exp(-self.param * s)
        if self.kind == "shafer":
            return math.exp(-s / 2) - math.exp(-s)
        k = self.param
        return k * (1 + k) ** k * s ** (-1 - k) if s >= 1 + k else 0.0


def power_calibrator(delta: float) -> Calibrator:
    return Calibrator("power", delta)


def kappa_calibrator(kappa: float) -> Calibrator:
    return Calibrator("kappa", kappa)


def shafer_calibrator() -> Calibrator:
    return Calibrator("shafer")


def e_to_p(e):
    """The e-to-p calibrator ``e -> min(1/e, 1)`` (``0 -> 1``, ``inf -> 0``)."""
    e_arr = np.asarray(e, dtype=float)
    if (e_arr < 0).any():
        raise ValueError("e-values are nonnegative")
    with np.errstate(divide="ignore", over="ignore"):
        out = np.minimum(1.0, np.where(e_arr > 0, 1.0 / np.where(e_arr > 0, e_arr, 1.0), 1.0))
    out = np.where(np.isinf(e_arr), 0.0, out)
    return float(out) if np.ndim(e) == 0 else out


def is_calibrator(f: Callable, tol: float = INTEGRAL_TOL, breakpoints=()) -> CheckReport:
    """Admissibility check: ``f`` non-increasing on a grid and ``int_0^1 f <= 1 + tol``.

    The integral is taken after substituting ``p = exp(-s)``, which turns
    the singularity at ``p = 0`` into a tail on ``[0, inf)``, by adaptive
    Gauss-Kronrod quadrature.  :class:`Calibrator` instances supply that
    integrand in closed form; for other callables it is evaluated directly
    and cut off where ``exp(-s)`` underflows.  A divergent integral reports
    ``ok = False``.
    """
    breakpoints = tuple(breakpoints) or getattr(f, "breakpoints", ())
    grid = np.linspace(0.0, 1.0, MONOTONE_GRID + 1)[1:]
    vals = np.asarray(f(grid), dtype=float)
    notes = []
    monotone = bool(np.all(np.diff(vals) <= 1e-12 * np.maximum(1.0, np.abs(vals[:-1]))))
    if not monotone:
        notes.append("not non-increasing on the check grid")

    if isinstance(f, Calibrator):
        integrand = f.exp_scale_integrand
    else:
        def integrand(s):
            p = math.exp(-s)
            if p == 0.0:
                return 0.0
            v = float(f(p)) * p
            return v if math.isfinite(v) else 0.0

    cuts = [0.0, *sorted(-math.log(b) for b in breakpoints if 0 < b < 1), math.inf]
    value, err = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in zip(cuts, cuts[1:]):
            piece, piece_err = integrate.quad(integrand, a, b, limit=500, epsabs=1e-12, epsrel=1e-12)[:2]
            value += piece
            err += piece_err
    value = float(value)
    converged = err <= 1e-7 and math.isfinite(value)
    divergent = not math.isfinite(value) or (not converged and value > 1.0 + tol)
    if divergent:
        notes.append("integral diverges or quadrature failed")
    ok = monotone and not divergent and value <= 1.0 + tol
    return CheckReport("calibrator", ok, value, {"abserr": float(err)}, tol,
                       converged=converged, notes=notes)


def apply_calibrator(f: Callable, table: FnTable) -> FnTable:
    """Pointwise p-to-e calibration of a p-table."""
    return table.with_values(np.asarray(f(table.to_float().values), dtype=float))


def apply_e_to_p(table: FnTable) -> FnTable:
    return table.with_values(e_to_p(table.to_float().values))
