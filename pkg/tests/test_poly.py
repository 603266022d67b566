"""Bracket algebra on the graded polynomials."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solitonnf.normalform.checks import jacobi_check, jacobi_defect, random_poly
from solitonnf.normalform.poly import (CapError, FSpace, Poly, bracket, bracket_st, key_weight,
                                       lie_pullback, monomials, multiply)

NM = 2

coef = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)
exps = st.tuples(st.integers(0, 2), st.integers(0, 2))
terms = st.dictionaries(st.tuples(exps, exps), coef, min_size=1, max_size=5)


def scalar_poly(d, cap=40):
    P = Poly(NM, 1, cap)
    for (mu, nu), a in d.items():
        P.add_scalar((mu, nu, (0,)), a)
    return P


def values(P, z):
    return P.evaluate(z, rho=np.zeros(1))


def fd_bracket(F, G, z, h=1e-6):
    """i sum_j (dF/dz_j dG/dzbar_j - dF/dzbar_j dG/dz_j) from complex FD on analytic extensions."""
    w = np.conj(z)
    out = 0.0
    for j in range(NM):
        e = np.eye(NM)[j]

        def dz(P):
            return (P.evaluate(z + h * e, w=w, rho=np.zeros(1))
                    - P.evaluate(z - h * e, w=w, rho=np.zeros(1))) / (2 * h)

        def dw(P):
            return (P.evaluate(z, w=w + h * e, rho=np.zeros(1))
                    - P.evaluate(z, w=w - h * e, rho=np.zeros(1))) / (2 * h)

        out += 1j * (dz(F) * dw(G) - dw(F) * dz(G))
    return out


@given(terms, terms)
@settings(max_examples=30, deadline=None)
def test_bracket_antisymmetric(a, b):
    F, G = scalar_poly(a), scalar_poly(b)
    S = bracket_st(F, G) + bracket_st(G, F)
    assert all(abs(v) < 1e-12 for v in S.scal.values())


@given(terms, terms, terms)
@settings(max_examples=20, deadline=None)
def test_jacobi_scalar(a, b, c):
    A, B, C = scalar_poly(a), scalar_poly(b), scalar_poly(c)
    scale = max(1.0, *(abs(v) for P in (A, B, C) for v in P.scal.values())) ** 3
    assert jacobi_defect(A, B, C) <= 1e-11 * scale


@given(terms, terms, st.tuples(coef, coef))
@settings(max_examples=30, deadline=None)
def test_bracket_matches_derivatives(a, b, zz):
    F, G = scalar_poly(a), scalar_poly(b)
    z = np.array(zz) * 0.3
    assert values(bracket_st(F, G), z) == pytest.approx(fd_bracket(F, G, z), abs=1e-6)


@given(terms, terms, terms)
@settings(max_examples=20, deadline=None)
def test_leibniz(a, b, c):
    F, G, K = scalar_poly(a), scalar_poly(b), scalar_poly(c)
    lhs = bracket_st(multiply(F, G), K)
    rhs = multiply(F, bracket_st(G, K)) + multiply(bracket_st(F, K), G)
    D = lhs - rhs
    assert all(abs(v) < 1e-10 for v in D.scal.values())


def test_canonical_pair():
    z = Poly(1, 1, 10)
    z.add_scalar(((1,), (0,), (0,)), 1.0)
    w = Poly(1, 1, 10)
    w.add_scalar(((0,), (1,), (0,)), 1.0)
    # {z, zbar} = i
    assert bracket_st(z, w).scal == {((0,), (0,), (0,)): 1j}


def test_monomials_count():
    # number of (mu, nu) with |mu| + |nu| = d in 2 modes: C(d + 3, 3)
    assert len(list(monomials(2, 3))) == 20
    assert list(monomials(0, 0)) == [((), ())]
    assert list(monomials(0, 2)) == []


def test_weight_includes_rho_twice():
    assert key_weight(((1,), (1,), (1,)), 0) == 4
    assert key_weight(((1,), (0,), (0,)), 1) == 2


def test_cap_drops_and_tags():
    P = Poly(1, 1, 3)
    P.add_scalar(((2,), (2,), (0,)), 1.0)
    assert not P.scal
    assert sum(P.tags.values()) == 1


def test_lie_pullback_rejects_low_weight():
    H = Poly(1, 1, 6)
    H.add_scalar(((1,), (1,), (0,)), 3.0)
    chi = Poly(1, 1, 6)
    chi.add_scalar(((1,), (1,), (0,)), 1.0)
    with pytest.raises(CapError):
        lie_pullback(H, chi)


def test_lie_pullback_is_time_one_map():
    from scipy.integrate import solve_ivp
    H = Poly(1, 1, 12)
    H.add_scalar(((1,), (1,), (0,)), 2.0)
    H.add_scalar(((3,), (0,), (0,)), 0.4)
    H.add_scalar(((0,), (3,), (0,)), 0.4)
    chi = Poly(1, 1, 12)
    chi.add_scalar(((2,), (1,), (0,)), 0.3 + 0.2j)
    chi.add_scalar(((1,), (2,), (0,)), 0.3 - 0.2j)
    chi.add_scalar(((3,), (0,), (0,)), 0.1j)
    chi.add_scalar(((0,), (3,), (0,)), -0.1j)
    dz = lambda z, w: sum(a * mu[0] * z ** (mu[0] - 1) * w ** nu[0]
                          for (mu, nu, _), a in chi.scal.items() if mu[0])
    dw = lambda z, w: sum(a * nu[0] * z ** mu[0] * w ** (nu[0] - 1)
                          for (mu, nu, _), a in chi.scal.items() if nu[0])

    def rhs(t, y):
        z, w = y[0] + 1j * y[1], y[2] + 1j * y[3]
        a, b = 1j * dw(z, w), -1j * dz(z, w)
        return [a.real, a.imag, b.real, b.imag]

    out = lie_pullback(H, chi)
    errs = []
    for z0 in (0.2 + 0.1j, 0.1 + 0.05j):
        sol = solve_ivp(rhs, (0, 1), [z0.real, z0.imag, z0.real, -z0.imag],
                        method="DOP853", rtol=1e-13, atol=1e-16)
        z1 = sol.y[0, -1] + 1j * sol.y[1, -1]
        w1 = sol.y[2, -1] + 1j * sol.y[3, -1]
        exact = H.evaluate(np.array([z1]), w=np.array([w1]), rho=np.zeros(1))
        approx = out.evaluate(np.array([z0]), rho=np.zeros(1))
        errs.append(abs(exact - approx))
    # first neglected weight is 13: halving z must cut the gap by about 2^13
    assert errs[0] < 1e-12
    assert np.log2(errs[0] / errs[1]) > 11.5


@pytest.mark.parametrize("which", ["tiny"])
def test_field_bracket_jacobi(which, request):
    p = request.getfixturevalue(which)
    rep = jacobi_check(FSpace(p.frame), seed=2)
    assert rep["defect"] < 1e-9


def test_field_bracket_antisymmetric(tiny, rng):
    sp = FSpace(tiny.frame)
    A = random_poly(sp, rng, 1, zmax=2)
    B = random_poly(sp, rng, 1, zmax=2)
    S = bracket(A, B, transport=False) + bracket(B, A, transport=False)
    assert max(abs(v) for v in S.scal.values()) < 1e-11
    assert max(float(np.max(np.abs(G))) for G in S.lin.values()) < 1e-11


def test_jacobi_without_modes(cubic):
    assert jacobi_check(FSpace(cubic.frame), trials=1)["defect"] < 1e-9
