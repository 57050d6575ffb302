import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conflab.conformal import (
    BinaryScore,
    ConstantScore,
    KNNScore,
    NonconformityMeasure,
    TableScore,
    as_table,
    binary_conformal,
    conformal_e,
    conformal_p,
    conformal_predict,
    make_score,
    prediction_set,
    smoothed_orbit_cdf,
)
from conflab.oracles import check_e_exchangeable, check_p_exchangeable, check_train_invariant
from conflab.space import Bag, ObservationSpace, enumerate_bags, orbit_means
from conflab.calibration import apply_e_to_p


class FixedScores(NonconformityMeasure):
    """Score of observation z is a fixed number, whatever the bag."""

    def __init__(self, space, table):
        super().__init__(space)
        self.table = table

    def score(self, counts, member):
        return self.table[member]


def test_counting_examples():
    space = ObservationSpace(1, 4)
    A = FixedScores(space, {0: 1.0, 1: 3.0, 2: 2.0, 3: 2.0})
    # train scores (1, 3, 2), candidate score 2
    assert conformal_p(A, [0, 1, 2], 0, 3) == 0.75
    assert conformal_p(ConstantScore(space), [0, 1, 2], 0, 3) == 1.0
    top = FixedScores(space, {0: 1.0, 1: 1.0, 2: 1.0, 3: 9.0})
    assert conformal_p(top, [0, 1, 2], 0, 3) == 0.25


def test_smoothed_counting():
    space = ObservationSpace(1, 4)
    A = FixedScores(space, {0: 1.0, 1: 3.0, 2: 2.0, 3: 2.0})
    # one strictly larger score, two ties (including the candidate)
    assert conformal_p(A, [0, 1, 2], 0, 3, tau=0.5) == pytest.approx((1 + 0.5 * 2) / 4)


def test_e_examples():
    space = ObservationSpace(1, 2)
    assert conformal_e(ConstantScore(space, 2.0), [0, 1, 1], 0, 0) == 1.0
    assert conformal_e(ConstantScore(space, 0.0), [0, 1, 1], 0, 0) == 1.0
    A = FixedScores(space, {0: 0.0, 1: 1.0})
    assert conformal_e(A, [0, 0, 0], 0, 1) == 4.0
    assert conformal_e(A, [0, 1, 0], 0, 0) == 0.0


def test_binary_conformal():
    space = ObservationSpace(1, 2)
    A = FixedScores(space, {0: 0.0, 1: 1.0})
    assert binary_conformal(A, [1, 0, 0], 0, 0) == (1.0, 0.0)
    p, e = binary_conformal(A, [1] + [0] * 8, 0, 1)
    assert p == pytest.approx(0.2) and e == pytest.approx(5.0)
    assert binary_conformal(A, [1, 1, 1], 0, 1) == (1.0, 1.0)
    with pytest.raises(ValueError):
        binary_conformal(KNNScore(ObservationSpace(3, 2)), [0, 3], 4, 1)


def test_binary_score_majority_rule():
    space = ObservationSpace(1, 2)
    A = BinaryScore(space)
    assert A((3, 1), 0) == 0.0
    assert A((3, 1), 1) == 1.0
    assert A((2, 2), 0) == 1.0
    custom = BinaryScore(space, rule=lambda counts, z: z == 1)
    assert custom((3, 1), 1) == 1.0 and custom((3, 1), 0) == 0.0


def test_knn_score_conventions():
    space = ObservationSpace(3, 2)
    A = KNNScore(space)
    z = space.encode
    assert A(_bag([z(0, 0)], 6), z(0, 0)) == 0.5
    assert A(_bag([z(0, 0), z(2, 1)], 6), z(0, 0)) == 1.0
    assert A(_bag([z(0, 0), z(2, 0)], 6), z(0, 0)) == 0.0
    assert A(_bag([z(0, 0), z(1, 0), z(2, 1)], 6), z(0, 0)) == pytest.approx(1 / 3)


def _bag(seq, z_card):
    counts = [0] * z_card
    for s in seq:
        counts[s] += 1
    return Bag(tuple(counts))


def test_score_rejects_nonmember():
    A = ConstantScore(ObservationSpace(1, 2))
    with pytest.raises(ValueError):
        A((2, 0), 1)


def test_custom_score_file(tmp_path):
    space = ObservationSpace(1, 2)
    entries = [{"bag_counts": list(b.counts), "member": z, "score": float(z)}
               for b in enumerate_bags(2, 2) for z in b.members()]
    path = tmp_path / "scores.json"
    import json
    path.write_text(json.dumps(entries))
    A = make_score("custom", space, path)
    assert isinstance(A, TableScore)
    assert A((1, 1), 1) == 1.0
    with pytest.raises(ValueError):
        make_score("custom", space)
    with pytest.raises(ValueError):
        make_score("svm", space)


def test_prediction_sets():
    p = {0: 0.25, 1: 0.5, 2: 1.0}
    assert prediction_set(p, 0.2) == {0, 1, 2}
    assert prediction_set({0: 0.25, 1: 0.5}, 0.5) == set()
    assert prediction_set(p, 0.3) == {1, 2}
    with pytest.raises(ValueError):
        prediction_set(p, 1.0)


@given(st.floats(0, 0.99), st.floats(0, 0.99))
def test_prediction_sets_are_nested(a, b):
    lo, hi = sorted((a, b))
    p = {y: v for y, v in enumerate((0.1, 0.25, 0.5, 0.75, 1.0))}
    assert prediction_set(p, hi) <= prediction_set(p, lo)


def test_conformal_predict_fields():
    space = ObservationSpace(2, 2)
    out = conformal_predict(KNNScore(space), [0, 3, 1], 1, tau=0.3)
    assert set(out.p) == set(out.e) == set(out.smoothed_p) == {0, 1}
    assert all(v >= 0.25 for v in out.p.values())


SCORES = [BinaryScore, KNNScore]
CASES = [(ObservationSpace(1, 2), n) for n in (1, 2, 3, 4)] + \
        [(ObservationSpace(1, 3), n) for n in (1, 2, 3)] + \
        [(ObservationSpace(2, 2), n) for n in (1, 2, 3)]


@pytest.mark.parametrize("score", SCORES, ids=lambda s: s.name)
@pytest.mark.parametrize("space, n", CASES, ids=str)
def test_tables_are_valid(score, space, n):
    A = score(space)
    P = as_table(A, n, "p")
    E = as_table(A, n, "e")
    assert check_train_invariant(P) and check_train_invariant(E)
    assert check_p_exchangeable(P).ok
    assert check_e_exchangeable(E).ok
    assert check_p_exchangeable(apply_e_to_p(E)).ok
    N = n + 1
    assert set(np.round(P.flat() * N, 9)) <= set(range(1, N + 1))
    assert P.flat().min() >= 1 / N


@pytest.mark.parametrize("score", SCORES, ids=lambda s: s.name)
@pytest.mark.parametrize("space, n", CASES, ids=str)
def test_e_orbit_means_are_one(score, space, n):
    _, means = orbit_means(as_table(score(space), n, "e"))
    np.testing.assert_allclose(means, 1.0, rtol=0, atol=1e-12)


def _brute_p(A, seq):
    """Direct definition on the sequence, without bag caches."""
    bag = _bag(seq, A.space.z_card)
    alphas = [A.score(bag.counts, z) for z in seq]
    return sum(a >= alphas[-1] for a in alphas) / len(seq)


@pytest.mark.parametrize("space, n", CASES[:6], ids=str)
def test_table_matches_direct_definition(space, n):
    A = KNNScore(space)
    P = as_table(A, n, "p")
    for seq in itertools.product(range(space.z_card), repeat=n + 1):
        assert P(seq) == _brute_p(A, seq)
        assert P(seq) == conformal_p(A, list(seq[:-1]), *space.decode(seq[-1]))


@pytest.mark.parametrize("score", SCORES, ids=lambda s: s.name)
@pytest.mark.parametrize("space, n", CASES, ids=str)
def test_smoothed_p_is_exactly_uniform_on_orbits(score, space, n):
    A = score(space)
    for bag in enumerate_bags(space.z_card, n + 1):
        for k in range(1, n + 2):
            eps = k / (n + 1)
            assert smoothed_orbit_cdf(A, bag, eps) == pytest.approx(eps, abs=1e-12)
        for eps in (0.0, 0.13, 0.5, 0.77):
            assert smoothed_orbit_cdf(A, bag, eps) == pytest.approx(eps, abs=1e-12)


def test_smoothed_table_at_tau_one_is_deterministic():
    space = ObservationSpace(1, 3)
    A = KNNScore(space)
    assert as_table(A, 2, "smoothed", tau=1.0) == as_table(A, 2, "p")
    # a frozen tau below 1 is not valid on its own; validity needs tau uniform
    assert not check_p_exchangeable(as_table(A, 2, "smoothed", tau=0.0)).ok


def test_minimum_p_is_one_over_n_plus_one():
    space = ObservationSpace(1, 2)
    assert as_table(BinaryScore(space), 1, "p").flat().min() == 1.0  # no strict majority in a pair
    for n in (0, 2, 3, 4):
        P = as_table(BinaryScore(space), n, "p")
        assert Fraction(P.flat().min()).limit_denominator(100) == Fraction(1, n + 1)
    assert as_table(ConstantScore(space), 3, "p").flat().min() == 1.0
