"""Seeded random members of each function class.

Each generator draws a nonnegative table and rescales it onto the validity
boundary using the corresponding oracle's worst value.  Instance ``i`` of a
campaign with seed ``s`` uses ``numpy.random.default_rng([s, i])``.
"""

from __future__ import annotations

import numpy as np

from .oracles import ClassLabel
from .simplex import IIDPolynomial, sup_iid
from .space import FnTable, ObservationSpace, bag_index, check_budget, orbit_means, permutation_mean


def instance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _raw(space: ObservationSpace, n: int, rng: np.random.Generator, sparsity: float | None = None) -> np.ndarray:
    check_budget(space.z_card, n + 1)
    size = space.z_card ** (n + 1)
    if sparsity is None:
        sparsity = rng.choice([0.0, 0.3, 0.7])
    vals = rng.exponential(size=size) ** rng.uniform(0.5, 3.0)
    vals[rng.random(size) < sparsity] = 0.0
    if not vals.any():
        vals[rng.integers(size)] = 1.0
    return vals.reshape((space.z_card,) * (n + 1))


def _iid_rescale(table: FnTable) -> FnTable:
    sup = sup_iid(IIDPolynomial.from_table(table)).value
    return table.scaled(1.0 / sup)


def random_e_iid(space, n, rng, train_invariant: bool = False) -> FnTable:
    vals = _raw(space, n, rng)
    if train_invariant:
        vals = permutation_mean(vals, range(n))
    return _iid_rescale(FnTable(space, n, vals))


def random_e_invariant_iid(space, n, rng) -> FnTable:
    """Random fully invariant IID e-variable (a random bag function)."""
    bags, inverse = bag_index(space.z_card, n + 1)
    per_bag = rng.exponential(size=bags.shape[0]) ** rng.uniform(0.5, 3.0)
    per_bag[rng.random(bags.shape[0]) < rng.choice([0.0, 0.5])] = 0.0
    if not per_bag.any():
        per_bag[rng.integers(per_bag.size)] = 1.0
    return _iid_rescale(FnTable(space, n, per_bag[inverse]))


def random_e_exchangeable(space, n, rng, train_invariant: bool = False,
                          per_orbit: bool | None = None) -> FnTable:
    """Random exchangeability e-variable.

    With ``per_orbit`` every orbit mean is normalized to 1; otherwise the
    table is rescaled globally by its worst orbit mean.
    """
    vals = _raw(space, n, rng)
    if train_invariant:
        vals = permutation_mean(vals, range(n))
    table = FnTable(space, n, vals)
    if per_orbit is None:
        per_orbit = bool(rng.integers(2))
    bags, means = orbit_means(table)
    if per_orbit:
        _, inverse = bag_index(space.z_card, n + 1)
        scale = np.where(means > 0, 1.0 / np.where(means > 0, means, 1.0), 0.0)
        return table.with_values(table.flat() * scale[inverse])
    return table.scaled(1.0 / means.max())


def random_test_conditional(space, n, rng) -> FnTable:
    vals = _raw(space, n, rng)
    avg = permutation_mean(vals, range(n))
    return FnTable(space, n, vals / avg.max())


def _tail_p(space, n, stat: np.ndarray) -> FnTable:
    """``P(z) = sup_Q Q^N(S >= S(z))``: an IID p-variable for any statistic ``S``."""
    bags, inverse = bag_index(space.z_card, n + 1)
    flat = stat.reshape(-1)
    pvals = np.ones_like(flat, dtype=float)
    for level in np.unique(flat):
        counts = np.bincount(inverse, weights=(flat >= level).astype(float), minlength=bags.shape[0])
        sup = min(1.0, sup_iid(IIDPolynomial(bags, counts)).value)
        pvals[flat == level] = sup
    return FnTable(space, n, pvals)


def _random_statistic(space, n, rng, train_invariant: bool, levels: int) -> np.ndarray:
    stat = rng.integers(levels, size=(space.z_card,) * (n + 1)).astype(float)
    if train_invariant:
        stat = permutation_mean(stat, range(n))
    return stat


def random_p_iid(space, n, rng, train_invariant: bool = False, levels: int = 5) -> FnTable:
    """Random IID p-variable from the supremum tail probability of a random statistic."""
    return _tail_p(space, n, _random_statistic(space, n, rng, train_invariant, levels))


def random_p_exchangeable(space, n, rng, train_invariant: bool = False, levels: int = 5) -> FnTable:
    """Permutation p-value of a random statistic: orbit fraction with ``S >= S(z)``."""
    stat = _random_statistic(space, n, rng, train_invariant, levels)
    bags, inverse = bag_index(space.z_card, n + 1)
    flat = stat.reshape(-1)
    pvals = np.empty_like(flat)
    for b in range(bags.shape[0]):
        idx = np.flatnonzero(inverse == b)
        vals = flat[idx]
        pvals[idx] = (vals[None, :] >= vals[:, None]).mean(axis=1)
    return FnTable(space, n, pvals)


def random_instance(label: ClassLabel | str, space: ObservationSpace, n: int,
                    rng: np.random.Generator) -> FnTable:
    label = ClassLabel(label)
    if label is ClassLabel.ER:
        return random_e_iid(space, n, rng)
    if label is ClassLabel.EtR:
        return random_e_iid(space, n, rng, train_invariant=True)
    if label is ClassLabel.EiR:
        return random_e_invariant_iid(space, n, rng)
    if label is ClassLabel.EX:
        return random_e_exchangeable(space, n, rng)
    if label is ClassLabel.EtX:
        return random_e_exchangeable(space, n, rng, train_invariant=True)
    if label is ClassLabel.TestCondEX:
        return random_test_conditional(space, n, rng)
    if label is ClassLabel.PR:
        return random_p_iid(space, n, rng)
    if label is ClassLabel.PtR:
        return random_p_iid(space, n, rng, train_invariant=True)
    if label is ClassLabel.PX:
        return random_p_exchangeable(space, n, rng)
    return random_p_exchangeable(space, n, rng, train_invariant=True)
