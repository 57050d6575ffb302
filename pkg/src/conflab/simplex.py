"""Supremum of an IID expectation over the probability simplex.

For a table ``T`` over ``Z^N`` the map ``Q -> E_{Q^N} T`` is the polynomial
``sum_b S_b prod_z q_z^{c_bz}`` where ``S_b`` is the orbit sum of bag ``b``.
We maximize it by a dense grid scan followed by local refinement (SLSQP,
then pairwise golden-section moves along simplex edges).  The result is a
certified lower bound on the supremum together with its maximizer.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.special import xlogy

from .space import FnTable, multinomial, orbit_sums

REFINE_TOL = 1e-9
GRID_RESOLUTION = {2: 4096, 3: 64, 4: 16}
RANDOM_STARTS = 4000


@dataclass(frozen=True)
class IIDPolynomial:
    """``sum_b coeffs[b] * prod_z q_z ** exponents[b, z]`` with nonnegative coefficients."""

    exponents: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        exps = np.atleast_2d(np.asarray(self.exponents, dtype=np.int64))
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if exps.shape[0] != coeffs.shape[0]:
            raise ValueError("one coefficient per exponent row is required")
        if (coeffs < 0).any() or np.isnan(coeffs).any():
            raise ValueError("coefficients must be nonnegative")
        keep = coeffs > 0
        object.__setattr__(self, "exponents", exps[keep])
        object.__setattr__(self, "coeffs", coeffs[keep])
        object.__setattr__(self, "z_card", exps.shape[1])

    @classmethod
    def from_table(cls, table: FnTable) -> "IIDPolynomial":
        bags, sums = orbit_sums(table.to_float())
        return cls(bags, sums)

    @classmethod
    def from_bag_values(cls, bags, values) -> "IIDPolynomial":
        """Polynomial of a fully invariant table given by its value on each bag."""
        bags = np.atleast_2d(np.asarray(bags, dtype=np.int64))
        sizes = np.array([float(multinomial(row)) for row in bags])
        return cls(bags, np.asarray(values, dtype=float) * sizes)

    def _log_terms(self, Q: np.ndarray) -> np.ndarray:
        # rows of Q are points; 0 ** 0 = 1 via xlogy
        with np.errstate(divide="ignore"):
            logc = np.log(self.coeffs)
        return logc[None, :] + xlogy(self.exponents[None, :, :], Q[:, None, :]).sum(axis=2)

    def evaluate(self, Q) -> np.ndarray | float:
        Q = np.asarray(Q, dtype=float)
        single = Q.ndim == 1
        Q = np.atleast_2d(Q)
        if self.coeffs.size == 0:
            out = np.zeros(Q.shape[0])
        else:
            with np.errstate(over="ignore"):
                out = np.exp(self._log_terms(Q)).sum(axis=1)
        return float(out[0]) if single else out

    def gradient(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.coeffs.size == 0:
            return np.zeros_like(q)
        terms = np.exp(self._log_terms(q[None, :]))[0]
        safe = np.where(q > 0, q, 1.0)
        grad = (terms[:, None] * self.exponents / safe[None, :]).sum(axis=0)
        # derivative at q_z = 0 comes only from terms with exponent exactly 1
        for z in np.flatnonzero(q <= 0):
            mask = self.exponents[:, z] == 1
            if mask.any():
                q_pos = q.copy()
                q_pos[z] = 1.0
                grad[z] = self.coeffs[mask] @ np.prod(
                    np.power(q_pos[None, :], self.exponents[mask]), axis=1
                )
            else:
                grad[z] = 0.0
        return grad


@dataclass(frozen=True)
class SupResult:
    value: float
    q: tuple[float, ...]
    converged: bool
    grid_value: float


def simplex_grid(z_card: int, resolution: int) -> np.ndarray:
    """All points of the simplex with coordinates in ``(1/resolution) * Z``."""
    pts = []
    for combo in itertools.combinations(range(resolution + z_card - 1), z_card - 1):
        prev = -1
        parts = []
        for c in combo:
            parts.append(c - prev - 1)
            prev = c
        parts.append(resolution + z_card - 2 - prev)
        pts.append(parts)
    return np.asarray(pts, dtype=float) / resolution


def start_points(z_card: int, seed: int = 0) -> np.ndarray:
    if z_card == 1:
        return np.ones((1, 1))
    if z_card in GRID_RESOLUTION:
        return simplex_grid(z_card, GRID_RESOLUTION[z_card])
    rng = np.random.default_rng(seed)
    pts = [np.full(z_card, 1.0 / z_card), *np.eye(z_card)]
    for i, j in itertools.combinations(range(z_card), 2):
        mid = np.zeros(z_card)
        mid[[i, j]] = 0.5
        pts.append(mid)
    pts.extend(rng.dirichlet(np.ones(z_card), size=RANDOM_STARTS // 2))
    pts.extend(rng.dirichlet(np.full(z_card, 0.3), size=RANDOM_STARTS // 2))
    return np.asarray(pts)


def _project(q: np.ndarray) -> np.ndarray:
    q = np.clip(q, 0.0, None)
    s = q.sum()
    return q / s if s > 0 else np.full_like(q, 1.0 / q.size)


def _slsqp(poly: IIDPolynomial, q0: np.ndarray) -> np.ndarray:
    z = q0.size
    scale = max(poly.evaluate(q0), 1e-300)
    res = minimize(
        lambda q: -poly.evaluate(_project(q)) / scale,
        q0,
        jac=lambda q: -poly.gradient(np.clip(q, 0.0, None)) / scale,
        method="SLSQP",
        bounds=[(0.0, 1.0)] * z,
        constraints=[{"type": "eq", "fun": lambda q: q.sum() - 1.0, "jac": lambda q: np.ones(z)}],
        options={"ftol": 1e-14, "maxiter": 300},
    )
    return _project(res.x)


def _pairwise_polish(poly: IIDPolynomial, q: np.ndarray, sweeps: int = 30) -> tuple[np.ndarray, bool]:
    """Coordinate ascent moving mass between pairs of coordinates (golden section)."""
    best = poly.evaluate(q)
    for _ in range(sweeps):
        start = best
        for i, j in itertools.combinations(range(q.size), 2):
            pool = q[i] + q[j]
            if pool <= 0:
                continue

            def neg(t, i=i, j=j, pool=pool):
                trial = q.copy()
                trial[i], trial[j] = t, pool - t
                return -poly.evaluate(trial)

            res = minimize_scalar(neg, bounds=(0.0, pool), method="bounded",
                                  options={"xatol": 1e-12 * max(pool, 1e-300)})
            for t in (res.x, 0.0, pool):
                val = -neg(t)
                if val > best:
                    best = val
                    q = q.copy()
                    q[i], q[j] = t, pool - t
        if best - start <= REFINE_TOL * max(1.0, abs(best)):
            return q, True
    return q, False


def sup_iid(poly: IIDPolynomial, n_starts: int = 3, seed: int = 0) -> SupResult:
    """Maximize ``poly`` over the simplex; ``value`` never undershoots the grid maximum."""
    z = poly.z_card
    if poly.coeffs.size == 0:
        return SupResult(0.0, tuple(np.full(z, 1.0 / z)), True, 0.0)
    if np.isinf(poly.coeffs).any():
        q = np.full(z, 1.0 / z)
        return SupResult(math.inf, tuple(q), True, math.inf)
    pts = start_points(z, seed)
    vals = poly.evaluate(pts)
    order = np.argsort(-vals)
    grid_value = float(vals[order[0]])
    if z == 1:
        return SupResult(grid_value, (1.0,), True, grid_value)

    best_q, best_v, converged = pts[order[0]].copy(), grid_value, None
    seen = []
    for idx in order:
        if len(seen) >= n_starts:
            break
        q0 = pts[idx]
        if any(np.abs(q0 - s).max() < 2.0 / GRID_RESOLUTION.get(z, 8) for s in seen):
            continue
        seen.append(q0)
        q = _slsqp(poly, q0) if z > 2 else q0.copy()
        q, ok = _pairwise_polish(poly, q)
        v = poly.evaluate(q)
        if converged is None or v > best_v:
            converged = ok
        if v > best_v:
            best_q, best_v = q, v
    return SupResult(float(best_v), tuple(float(x) for x in best_q), converged, grid_value)


def sup_iid_expectation(table: FnTable | IIDPolynomial, n_starts: int = 3) -> SupResult:
    """``sup_Q E_{Q^N}[table]`` with its maximizing ``Q``."""
    poly = table if isinstance(table, IIDPolynomial) else IIDPolynomial.from_table(table)
    return sup_iid(poly, n_starts=n_starts)


def monomial_matrix(exponents: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """``M[b, g] = prod_z pts[g, z] ** exponents[b, z]`` (used for batched grid scans)."""
    return np.exp(xlogy(exponents[:, None, :], pts[None, :, :]).sum(axis=2))
