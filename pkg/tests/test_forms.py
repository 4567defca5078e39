import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyslag.cartan import build_su_structure
from cyslag.forms import (AltForm, DimensionMismatch, contract, contract_many, decomposable_check,
                          evaluate, format_form, lie_action, pullback, restrict, wedge, wedge_all)
from helpers import random_form

seeds = st.integers(0, 2**32 - 1)
N = 500


def dx(d, *idx, c=1.0):
    return AltForm.basis(d, *idx, coeff=c)


# construction ------------------------------------------------------------------


def test_blades_must_increase():
    with pytest.raises(ValueError):
        AltForm(3, 2, {(1, 0): 1.0})
    with pytest.raises(ValueError):
        AltForm(3, 1, {(3,): 1.0})


def test_degree_zero_has_empty_blade():
    s = AltForm.scalar(4, 2.5)
    assert s.degree == 0 and dict(s.coeffs) == {(): 2.5}


def test_basis_sorts_with_sign():
    assert dx(3, 1, 0)[(0, 1)] == -1
    assert dx(3, 1, 1).is_zero()


def test_format_form():
    a = dx(6, 0, 5, c=1 + 2j)
    assert format_form(a, ["x1", "x2", "x3", "y1", "y2", "y3"]) == "(1+2i)·dx1^dy3"
    assert str(AltForm.zero(3, 1)) == "0"


# wedge -----------------------------------------------------------------------------


def test_wedge_basis_duality():
    e = np.eye(2)
    assert evaluate(dx(2, 0) ^ dx(2, 1), [e[0], e[1]]) == 1


def test_wedge_overflow_is_zero():
    a = dx(3, 0, 1)
    assert wedge(a, a).is_zero() and wedge(a, a).degree == 4


def test_wedge_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        wedge(dx(3, 0), dx(4, 0))


def test_normalization_n3():
    s = build_su_structure(3)
    lhs = wedge_all([s.omega0] * 3) / 6
    rhs = (-1) ** 3 * (0.5j) ** 3 * wedge(s.Omega0, s.Omega0.conj())
    assert (lhs - rhs).norm() <= 1e-14


@settings(max_examples=N)
@given(seeds, st.integers(1, 6), st.integers(1, 3), st.integers(1, 3))
def test_graded_anticommutativity(seed, d, j, k):
    rng = np.random.default_rng(seed)
    j, k = min(j, d), min(k, d)
    a, b = random_form(rng, d, j), random_form(rng, d, k)
    assert (wedge(a, b) - (-1) ** (j * k) * wedge(b, a)).norm() <= 1e-13 * max(1, a.norm() * b.norm())


@settings(max_examples=N)
@given(seeds, st.integers(3, 6), st.sampled_from([1, 3]))
def test_odd_self_wedge_vanishes(seed, d, k):
    rng = np.random.default_rng(seed)
    a = random_form(rng, d, k)
    assert wedge(a, a).norm() <= 1e-13 * max(1, a.norm() ** 2)


@settings(max_examples=N)
@given(seeds, st.integers(2, 6))
def test_wedge_bilinear(seed, d):
    rng = np.random.default_rng(seed)
    a, a2, b = random_form(rng, d, 1), random_form(rng, d, 1), random_form(rng, d, 2)
    s, t = rng.normal(size=2) + 1j * rng.normal(size=2)
    lhs = wedge(s * a + t * a2, b)
    rhs = s * wedge(a, b) + t * wedge(a2, b)
    assert (lhs - rhs).norm() <= 1e-13 * max(1, lhs.norm())


# contract -------------------------------------------------------------------------


def test_contract_basis():
    assert contract(np.eye(2)[0], dx(2, 0, 1)).allclose(dx(2, 1), 0)


def test_contract_degree_zero_raises():
    with pytest.raises(ValueError):
        contract(np.ones(3), AltForm.scalar(3, 1.0))


def test_contract_non_finite_raises():
    with pytest.raises(ValueError):
        contract(np.array([np.nan, 0, 0]), dx(3, 0))


def test_contract_order_convention():
    # i_{e0} i_{e1} (dx0 ^ dx1) contracts e1 first: i_{e0}(-dx0) = -1
    e = np.eye(2)
    assert contract_many([e[0], e[1]], dx(2, 0, 1))[()] == -1


@settings(max_examples=N)
@given(seeds, st.integers(1, 6), st.integers(1, 4))
def test_contract_twice_vanishes(seed, d, k):
    rng = np.random.default_rng(seed)
    k = min(k, d)
    a = random_form(rng, d, k)
    v = rng.normal(size=d)
    if k == 1:
        assert contract(v, a).degree == 0
        return
    assert contract(v, contract(v, a)).norm() <= 1e-13 * max(1, a.norm() * v @ v)


@settings(max_examples=N)
@given(seeds, st.integers(2, 6), st.integers(1, 3), st.integers(1, 3))
def test_contract_antiderivation(seed, d, j, k):
    rng = np.random.default_rng(seed)
    j, k = min(j, d - 1), min(k, d - 1)
    a, b = random_form(rng, d, j), random_form(rng, d, k)
    v = rng.normal(size=d)
    lhs = contract(v, wedge(a, b))
    rhs = wedge(contract(v, a), b) + (-1) ** j * wedge(a, contract(v, b))
    scale = max(1, a.norm() * b.norm() * np.abs(v).sum())
    assert (lhs - rhs).norm() <= 1e-13 * scale


# lie action ------------------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 2, 3])
def test_lie_identity_scales(k):
    a = random_form(np.random.default_rng(k), 5, k)
    assert lie_action(np.eye(5), a).allclose(k * a, 1e-13)


def test_lie_J_kills_omega0():
    s = build_su_structure(3)
    assert lie_action(s.J, s.omega0).is_zero(1e-14)


def test_lie_J_on_Omega0_is_minus_3i():
    # J = [[0, I], [-I, 0]] sends e_x -> -e_y, i.e. acts as multiplication
    # by -i on z = x + i y, so the derivation gives -n i (recorded convention)
    s = build_su_structure(3)
    assert lie_action(s.J, s.Omega0).allclose(-3j * s.Omega0, 1e-14)
    e = np.eye(6)
    # brute-force oracle over basis triples
    for I in [(0, 1, 2), (0, 4, 5), (3, 4, 5), (1, 3, 5)]:
        vs = [e[i] for i in I]
        direct = sum(evaluate(s.Omega0, vs[:p] + [s.J @ vs[p]] + vs[p + 1:]) for p in range(3))
        assert abs(direct - (-3j) * evaluate(s.Omega0, vs)) <= 1e-14


@settings(max_examples=N)
@given(seeds, st.integers(2, 6), st.integers(1, 3), st.integers(1, 3))
def test_lie_leibniz(seed, d, j, k):
    rng = np.random.default_rng(seed)
    j, k = min(j, d - 1), min(k, d - 1)
    a, b = random_form(rng, d, j), random_form(rng, d, k)
    x = rng.normal(size=(d, d))
    lhs = lie_action(x, wedge(a, b))
    rhs = wedge(lie_action(x, a), b) + wedge(a, lie_action(x, b))
    assert (lhs - rhs).norm() <= 1e-12 * max(1, a.norm() * b.norm() * np.abs(x).sum())


@settings(max_examples=200)
@given(seeds, st.integers(2, 5), st.integers(1, 3))
def test_lie_matches_definition(seed, d, k):
    rng = np.random.default_rng(seed)
    k = min(k, d)
    a, x = random_form(rng, d, k), rng.normal(size=(d, d))
    vs = list(rng.normal(size=(k, d)))
    direct = sum(evaluate(a, vs[:p] + [x @ vs[p]] + vs[p + 1:]) for p in range(k))
    assert abs(lie_action(x, a)(*vs) - direct) <= 1e-11 * max(1, abs(direct))


# restrict / pullback -------------------------------------------------------------------


def test_restrict_examples():
    assert restrict(dx(6, 0, 3), 3).is_zero()
    s = build_su_structure(3)
    assert restrict(s.omega0, 2).is_zero()
    a = random_form(np.random.default_rng(0), 6, 2)
    assert restrict(a, 6).allclose(a, 0)
    assert restrict(restrict(a, 4), 4).allclose(restrict(a, 4), 0)


def test_restrict_out_of_range():
    with pytest.raises(ValueError):
        restrict(dx(3, 0), 4)


def test_pullback_examples():
    a = random_form(np.random.default_rng(1), 5, 3)
    assert pullback(np.eye(5), a).allclose(a, 1e-14)
    assert pullback(2 * np.eye(5), a).allclose(8 * a, 1e-13)
    s = build_su_structure(3)
    assert pullback(s.J, s.omega0).allclose(s.omega0, 1e-14)


@settings(max_examples=N)
@given(seeds, st.integers(2, 6), st.integers(1, 3), st.integers(1, 3))
def test_pullback_commutes_with_wedge(seed, d, j, k):
    rng = np.random.default_rng(seed)
    j, k = min(j, d - 1), min(k, d - 1)
    a, b = random_form(rng, d, j), random_form(rng, d, k)
    A = rng.normal(size=(d, d))
    lhs = pullback(A, wedge(a, b))
    rhs = wedge(pullback(A, a), pullback(A, b))
    assert (lhs - rhs).norm() <= 1e-13 * max(1, lhs.norm())


@settings(max_examples=200)
@given(seeds, st.integers(2, 5), st.integers(1, 3))
def test_pullback_functorial(seed, d, k):
    rng = np.random.default_rng(seed)
    a = random_form(rng, d, min(k, d))
    A, B = rng.normal(size=(d, d)), rng.normal(size=(d, d))
    lhs = pullback(A @ B, a)
    rhs = pullback(B, pullback(A, a))
    assert (lhs - rhs).norm() <= 1e-12 * max(1, lhs.norm())


# decomposability -------------------------------------------------------------------


def test_decomposable_examples():
    assert not decomposable_check(dx(4, 0, 1) + dx(4, 2, 3))
    assert decomposable_check(build_su_structure(3).Omega0)
    assert decomposable_check(wedge(dx(3, 0) + dx(3, 1), dx(3, 2)))


def test_decomposable_degree_zero_raises():
    with pytest.raises(ValueError):
        decomposable_check(AltForm.scalar(3, 1.0))


@settings(max_examples=200)
@given(seeds, st.integers(3, 6), st.integers(1, 3))
def test_wedges_of_one_forms_are_decomposable(seed, d, k):
    rng = np.random.default_rng(seed)
    a = wedge_all([random_form(rng, d, 1) for _ in range(min(k, d))])
    assert decomposable_check(a, 1e-10)
