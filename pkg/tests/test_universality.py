import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conflab.conformal import KNNScore, BinaryScore, as_table
from conflab.instances import instance_rng, random_instance
from conflab.oracles import (
    check_e_exchangeable,
    check_e_iid,
    check_fully_invariant,
    check_test_conditional,
    check_train_invariant,
)
from conflab.space import FnTable, ObservationSpace
from conflab.universality import (
    E_LOWER,
    ChainStageError,
    compare_chain_bounds,
    corollary_kolmogorov_chain,
    decompose,
    full_p_chain,
    kolmogorov_constant,
    minimal_G_kolmogorov,
    minimal_G_traininv,
    permutation_average,
    product_embed,
    train_average,
    train_invariant_p_chain,
)

from conftest import table_from_dict

B = ObservationSpace(1, 2)


def test_e_lower_bound_is_below_e():
    with mpmath.workdps(50):
        assert mpmath.mpf(E_LOWER.numerator) / E_LOWER.denominator < mpmath.e
        assert mpmath.e - mpmath.mpf(E_LOWER.numerator) / E_LOWER.denominator < 1e-15


def test_permutation_average_examples():
    sym = FnTable.from_function(B, 2, lambda s: float(sum(s)))
    assert permutation_average(sym) == sym
    t = table_from_dict(B, 1, {(0, 1): 2.0, (1, 0): 0.0})
    F = permutation_average(t)
    assert F((0, 1)) == F((1, 0)) == 1.0
    space = ObservationSpace(1, 3)
    ind = table_from_dict(space, 2, {(0, 1, 1): 1.0})
    F = permutation_average(ind)
    for s in ((0, 1, 1), (1, 0, 1), (1, 1, 0)):
        assert F(s) == pytest.approx(1 / 3)
    assert F((0, 0, 1)) == 0.0


def test_decompose_examples():
    one = FnTable.constant(B, 1, 1.0)
    dec = decompose(one)
    assert dec.ok and (dec.E_exch.to_float() == one) and (dec.F_inv.to_float() == one)
    E = table_from_dict(B, 1, {(0, 1): 2.0, (1, 0): 0.0}, default=1.0)
    dec = decompose(E)
    assert dec.ok
    assert dec.F_inv.to_float() == one and dec.E_exch.to_float() == E


def test_decompose_permutation_table():
    space = ObservationSpace(1, 3)
    E = FnTable.from_function(space, 2, lambda s: 4.5 if len(set(s)) == 3 else 0.0)
    dec = decompose(E)
    assert dec.ok
    assert check_e_exchangeable(dec.E_exch).worst_value == pytest.approx(1.0)
    rep = check_e_iid(dec.F_inv)
    assert rep.worst_value == pytest.approx(1.0, abs=1e-9)
    assert rep.witness == pytest.approx((1 / 3,) * 3, abs=1e-5)


def test_decompose_rejects_out_of_class():
    with pytest.raises(ChainStageError) as info:
        decompose(FnTable.constant(B, 1, 2.0))
    assert info.value.stage == "input"


@pytest.mark.parametrize("space, n", [(B, 2), (ObservationSpace(1, 3), 1), (ObservationSpace(2, 2), 1)], ids=str)
@given(seed=st.integers(0, 10_000))
def test_decomposition_invariants(space, n, seed):
    E = random_instance("ER", space, n, np.random.default_rng(seed))
    dec = decompose(E)
    assert dec.ok
    Ex = E.to_exact().values
    F, Ep = dec.F_inv.values, dec.E_exch.values
    zero = F == 0
    assert all(v == 0 for v in Ex[zero]) and all(v == 1 for v in Ep[zero])
    assert all(a * b == c for a, b, c in zip(Ep[~zero], F[~zero], Ex[~zero]))


def test_product_embed():
    one = FnTable.constant(B, 2, 1.0)
    prod, rep = product_embed(one, one)
    assert prod == one and rep.ok
    E_exch = as_table(KNNScore(ObservationSpace(1, 3)), 2, "e")
    space = ObservationSpace(1, 3)
    perm = FnTable.from_function(space, 2, lambda s: 4.5 if len(set(s)) == 3 else 0.0)
    prod, rep = product_embed(E_exch, perm)
    assert rep.ok
    prod, rep = product_embed(E_exch, FnTable.constant(space, 2, 1.0))
    assert prod == E_exch and rep.ok
    with pytest.raises(ChainStageError):
        product_embed(E_exch, FnTable.constant(space, 2, 2.0))


def _brute_G_kolmogorov(F):
    space = F.space
    G = np.zeros(F.values.shape)
    for seq in itertools.product(range(space.z_card), repeat=F.N):
        x, yt = space.decode(seq[-1])
        G[seq] = max(float(F.values[seq[:-1] + (space.encode(x, y),)])
                     for y in range(space.y_card) if y != yt) / (math.e * (space.y_card - 1))
    return G


def test_kolmogorov_examples():
    for y_card in (2, 3):
        space = ObservationSpace(1, y_card)
        G, rep = minimal_G_kolmogorov(FnTable.constant(space, 1, 1.0))
        np.testing.assert_allclose(G.values, 1 / (math.e * (y_card - 1)))
        assert rep.ok
    F = table_from_dict(B, 1, {(0, 1): 2.0, (1, 0): 2.0})
    assert check_e_iid(F).worst_value == pytest.approx(1.0)
    G, rep = minimal_G_kolmogorov(F, check_input=True)
    assert G((0, 0)) == G((1, 1)) == pytest.approx(2 / math.e)
    assert G((0, 1)) == G((1, 0)) == 0.0
    assert rep.ok and rep.worst_value == pytest.approx(2 / math.e, abs=1e-6)


@pytest.mark.parametrize("space, n", [(ObservationSpace(1, 3), 1), (ObservationSpace(2, 3), 1), (B, 3)], ids=str)
def test_kolmogorov_witness_matches_brute_force(space, n):
    F = random_instance("EiR", space, n, instance_rng(4, 0))
    G, rep = minimal_G_kolmogorov(F, check_input=True)
    np.testing.assert_allclose(G.values, _brute_G_kolmogorov(F), rtol=1e-12)
    assert rep.ok


def test_kolmogorov_witness_is_minimal():
    space = ObservationSpace(1, 3)
    F = random_instance("EiR", space, 1, instance_rng(9, 0))
    G, _ = minimal_G_kolmogorov(F)
    idx = np.unravel_index(np.argmax(G.values), G.values.shape)
    lowered = G.values.copy()
    lowered[idx] *= 0.999
    seq = tuple(int(i) for i in idx)
    x, yt = space.decode(seq[-1])
    required = max(F.values[seq[:-1] + (space.encode(x, y),)] for y in range(3) if y != yt)
    assert lowered[idx] * math.e * 2 < required


@pytest.mark.parametrize("y_card", [2, 3])
def test_kolmogorov_constant_probe(y_card):
    space = ObservationSpace(1, y_card)
    worst = 0.0
    for i in range(10):
        F = random_instance("EiR", space, 2 if y_card == 2 else 1, instance_rng(21, i))
        c = kolmogorov_constant(F)
        assert c <= math.e * (y_card - 1) + 1e-9
        worst = max(worst, c)
    assert worst > 0


def test_train_average_examples():
    space = ObservationSpace(1, 3)
    ti = FnTable.from_function(space, 2, lambda s: float(s[0] + s[1] + 3 * s[2]))
    assert train_average(ti) == ti
    t = table_from_dict(space, 2, {(0, 1, 2): 4.0, (1, 0, 2): 0.0})
    avg = train_average(t)
    assert avg((0, 1, 2)) == avg((1, 0, 2)) == 2.0


@given(seed=st.integers(0, 10_000))
def test_train_average_preserves_exchangeability(seed):
    E = random_instance("EX", ObservationSpace(1, 3), 2, np.random.default_rng(seed))
    avg = train_average(E)
    assert check_train_invariant(avg) and check_e_exchangeable(avg).ok


def test_traininv_witness_examples():
    space = ObservationSpace(1, 3)
    E = as_table(KNNScore(space), 2, "e")
    G, rep = minimal_G_traininv(E)
    np.testing.assert_allclose(G.to_float().values, 0.5)
    assert rep.ok


@given(seed=st.integers(0, 10_000))
def test_traininv_witness_binary_flip(seed):
    E = random_instance("EX", B, 2, np.random.default_rng(seed))
    G, rep = minimal_G_traininv(E, check_input=True)
    assert rep.ok
    Ebar = train_average(E)
    for seq in itertools.product(range(2), repeat=3):
        flip = seq[:-1] + (1 - seq[-1],)
        num, den = E.values[flip], Ebar.values[flip]
        expected = 1.0 if num == den == 0 else (math.inf if den == 0 else num / den)
        assert G.values[seq] == pytest.approx(expected)


def test_corollary_chain_trivial():
    for y_card in (2, 3):
        one = FnTable.constant(ObservationSpace(1, y_card), 1, 1.0)
        chain = corollary_kolmogorov_chain(one)
        assert chain.verified
        # the minimal witness makes the bound tight; any larger valid G (e.g. 1) makes it strict
        assert chain.pointwise.worst_ratio == 1.0
        np.testing.assert_allclose(chain.G.to_float().values, 1 / (float(E_LOWER) * (y_card - 1)))
        assert 1.0 > 1.0 / (math.e * (y_card - 1) * 1.0)


def test_corollary_chain_round_trip():
    space = ObservationSpace(1, 3)
    E_exch = as_table(BinaryScore(space), 2, "e")
    F = FnTable.from_function(space, 2, lambda s: 4.5 if len(set(s)) == 3 else 0.0)
    E, _ = product_embed(E_exch, F)
    chain = corollary_kolmogorov_chain(E)
    assert chain.verified
    positive = F.values > 0
    np.testing.assert_allclose(chain.E_exch.to_float().values[positive], E_exch.values[positive])


@pytest.mark.parametrize("delta", [0.1, 0.5])
def test_full_chain_on_trivial_and_conformal(delta):
    cert = full_p_chain(FnTable.constant(B, 1, 1.0), delta)
    assert cert.verified
    for space in (B, ObservationSpace(1, 3)):
        P = as_table(KNNScore(space), 2 if space is B else 1, "p")
        cert = full_p_chain(P, delta)
        assert cert.verified
        assert cert.stage_reports["G_ER"].ok
        assert cert.constant == pytest.approx(math.e * (space.y_card - 1) ** 2 / delta)


def _float_certificate_holds(P, cert, power):
    """Direct float re-check of the certificate bound with a small relative slack."""
    space = P.space
    k = space.y_card - 1
    Pc, G = cert.P_conformal.values, cert.G_iid.values
    for seq in itertools.product(range(space.z_card), repeat=P.N):
        x, yt = space.decode(seq[-1])
        for y in range(space.y_card):
            if y == yt:
                continue
            false = seq[:-1] + (space.encode(x, y),)
            bound = math.e * k**power / cert.delta * G[seq] ** power * P.values[false] ** (1 - cert.delta)
            if Pc[false] > bound * (1 + 1e-9):
                return False
    return True


@pytest.mark.parametrize("seed", range(3))
def test_chain_bounds_recheck_in_floats(seed):
    space = ObservationSpace(1, 3)
    P = random_instance("PtR", space, 1, instance_rng(seed, 0))
    full = full_p_chain(P, 0.5)
    ti = train_invariant_p_chain(P, 0.5)
    assert _float_certificate_holds(P, full, 2)
    assert _float_certificate_holds(P, ti, 1)
    cmp = compare_chain_bounds(full, ti)
    assert cmp.at_least_as_tight
    assert cmp.constant_ratio == pytest.approx(2.0)


def test_chain_rejects_invalid_inputs():
    with pytest.raises(ChainStageError):
        full_p_chain(FnTable.constant(B, 1, 0.5), 0.5)
    with pytest.raises(ValueError):
        full_p_chain(FnTable.constant(B, 1, 1.0), 1.5)
    asym = table_from_dict(B, 2, {(0, 1, 0): 0.9}, default=1.0)
    with pytest.raises(ChainStageError):
        train_invariant_p_chain(asym, 0.5)


def test_certificate_serializes():
    cert = full_p_chain(as_table(KNNScore(B), 2, "p"), 0.5)
    d = cert.to_dict()
    assert d["verified"] and d["pointwise"]["violations"] == 0
    assert set(d["stages"]) >= {"G1_ER", "G2_test_conditional", "G_ER", "P_conformal_PX"}
    assert check_fully_invariant(FnTable.constant(B, 1, 1.0))
    assert check_test_conditional(FnTable.constant(B, 1, 1.0)).ok
