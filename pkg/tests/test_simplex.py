import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import differential_evolution

from conflab.simplex import IIDPolynomial, simplex_grid, sup_iid, sup_iid_expectation
from conflab.space import FnTable, ObservationSpace, iid_expectation

from conftest import grid_sup_1d, table_from_dict


def test_constant_table_sup():
    t = FnTable.constant(ObservationSpace(1, 3), 2, 2.5)
    assert sup_iid_expectation(t).value == pytest.approx(2.5)


def test_interior_sup_three_q_one_minus_q():
    # sup of 3 q (1 - q) sits strictly inside the simplex
    space = ObservationSpace(1, 2)
    t = table_from_dict(space, 1, {(0, 1): 3.0})
    res = sup_iid_expectation(t)
    assert res.value == pytest.approx(0.75, abs=1e-12)
    assert res.q == pytest.approx((0.5, 0.5), abs=1e-6)
    # the vertices alone would report 0
    assert max(iid_expectation(t, v) for v in ((1, 0), (0, 1))) == 0.0


def test_permutation_polynomial_sup_at_uniform():
    space = ObservationSpace(1, 3)
    t = FnTable.from_function(space, 2, lambda s: 4.5 if len(set(s)) == 3 else 0.0)
    res = sup_iid_expectation(t)
    assert res.value == pytest.approx(1.0, abs=1e-9)
    assert res.q == pytest.approx((1 / 3,) * 3, abs=1e-5)


def test_grid_contains_vertices_and_sums_to_one():
    g = simplex_grid(3, 8)
    assert len(g) == math.comb(10, 2)
    np.testing.assert_allclose(g.sum(axis=1), 1.0)
    assert any((row == [1, 0, 0]).all() for row in g)


def test_polynomial_matches_table_expectation():
    rng = np.random.default_rng(3)
    space = ObservationSpace(1, 3)
    t = FnTable(space, 2, rng.random(27))
    poly = IIDPolynomial.from_table(t)
    for q in rng.dirichlet(np.ones(3), size=10):
        assert poly.evaluate(q) == pytest.approx(iid_expectation(t, q), rel=1e-12)


def test_gradient_matches_finite_differences():
    poly = IIDPolynomial(np.array([[2, 1, 0], [0, 1, 2], [1, 1, 1]]), np.array([1.0, 2.0, 3.0]))
    q = np.array([0.2, 0.5, 0.3])
    h = 1e-6
    for z in range(3):
        d = np.zeros(3)
        d[z] = h
        fd = (poly.evaluate(q + d) - poly.evaluate(q - d)) / (2 * h)
        assert poly.gradient(q)[z] == pytest.approx(fd, rel=1e-6)


def test_infinite_coefficient_gives_infinite_sup():
    poly = IIDPolynomial(np.array([[1, 1]]), np.array([math.inf]))
    assert sup_iid(poly).value == math.inf


@given(st.lists(st.floats(0, 5), min_size=8, max_size=8))
def test_one_dimensional_sup_matches_dense_scan(vals):
    t = FnTable(ObservationSpace(1, 2), 2, vals)
    res = sup_iid_expectation(t)
    assert res.value >= grid_sup_1d(t, 2001) - 1e-12
    assert res.value <= grid_sup_1d(t, 2001) + 1e-3 * max(1.0, max(vals))
    assert iid_expectation(t, res.q) == pytest.approx(res.value, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_sup_matches_global_optimizer_on_four_outcomes(seed):
    rng = np.random.default_rng(seed)
    t = FnTable(ObservationSpace(2, 2), 2, rng.random(64) ** 3)
    poly = IIDPolynomial.from_table(t)

    def neg(w):
        w = np.abs(w) + 1e-300
        return -poly.evaluate(w / w.sum())

    ref = -differential_evolution(neg, [(0, 1)] * 4, seed=seed, tol=1e-12, polish=True).fun
    res = sup_iid(poly)
    assert res.value >= ref - 1e-7


def test_five_outcomes_use_random_starts():
    rng = np.random.default_rng(0)
    t = FnTable(ObservationSpace(1, 5), 1, rng.random(25))
    res = sup_iid_expectation(t)
    assert res.converged
    grid = [iid_expectation(t, q) for q in rng.dirichlet(np.ones(5), size=300)]
    assert res.value >= max(grid) - 1e-12
