"""Expansion, homological solves and Birkhoff steps on the n=32 oracle grid."""
import numpy as np
import pytest

from solitonnf.normalform import (NormalFormError, ResonanceError, classify, normalize, solve_modified,
                                  solve_plain)
from solitonnf.normalform.build import ComposedHamiltonian
from solitonnf.normalform.birkhoff import diag_values, removable_max
from solitonnf.normalform.homological import frozen_quadratic, target_predicates
from solitonnf.normalform.poly import Poly, bracket_st, zdeg


def circle_jets(fn, M=16):
    s = np.exp(2j * np.pi * np.arange(M) / M)
    return np.fft.fft(np.array([fn(x) for x in s])) / M


# ----------------------------------------------------------------------------
# expansion


def test_build_report(tiny_H1, tiny):
    H, rep = tiny_H1
    assert rep.diag_deviation <= 1e-6
    assert rep.linear_leading <= 1e-7
    assert rep.radius_consistency <= 1e-6
    assert H.cap == tiny.frame.weight_cap
    assert diag_values(H)[0] == pytest.approx(tiny.frame.e[0], abs=1e-6)


def test_expansion_is_real(tiny_H1):
    H, _ = tiny_H1
    scale = max(abs(v) for v in H.scal.values())
    assert H.reality_defect() <= 1e-6 * scale


def test_no_constant_or_linear_z_terms(tiny_H1):
    H, _ = tiny_H1
    z0 = ((0,), (0,), (0,))
    for key, a in H.scal.items():
        if zdeg(key) == 1 and key[2] == (0,):
            assert abs(a) < 1e-7
    assert abs(H.scal.get(z0, 0.0)) < 1e-12


@pytest.fixture(scope="module")
def direct(tiny, tiny_H1):
    """Jet gaps between the expansion and the composed Hamiltonian along a ray."""
    H, _ = tiny_H1
    ch = tiny.chart
    comp = ComposedHamiltonian(ch)
    sp = H.space
    rng = np.random.default_rng(0)
    fh = sp.Pc(rng.normal(size=sp.shape))
    fh = fh / np.sqrt(sp.pair(fh, fh))
    zh, rh = np.array([0.6 + 0.8j]), np.array([0.7])
    eps = np.array([0.4, 0.2, 0.1])
    gaps = []
    for ep in eps:
        r = ep * ch.radius
        z, rho = r * zh, r * r * rh

        def exact(s):
            return comp.value(z[None], np.conj(z)[None], (s * r * fh)[None], rho[None])[0]

        def approx(s):
            return H.evaluate(z, s * r * fh, rho=rho)

        gaps.append(np.abs(circle_jets(exact) - circle_jets(approx))[:3])
    gaps = np.array(gaps)
    return [np.polyfit(np.log(eps), np.log(gaps[:, j]), 1)[0] for j in range(3)]


def test_expansion_against_direct_evaluation(direct):
    # scalar and f-linear parts are complete through weight 5
    assert direct[0] >= 5.7
    assert direct[1] >= 5.7


def test_quadratic_part_against_direct_evaluation(direct):
    # f^2 blocks stop at weight 4, so that jet converges one order slower
    assert direct[2] >= 4.7


# ----------------------------------------------------------------------------
# homological equations


def test_classify():
    e, edge = np.array([3.0]), 4.1
    assert classify(((1,), (1,), (0,)), "scalar", e, edge) == "Z0"
    assert classify(((2,), (1,), (0,)), "scalar", e, edge) == "removable"
    assert classify(((1,), (0,), (0,)), "linear", e, edge) == "removable"
    assert classify(((0,), (2,), (0,)), "linear", e, edge) == "Z1"
    assert classify(((2,), (0,), (0,)), "linear", e, edge) == "Z1"


def test_plain_solve_residual(tiny, tiny_H1):
    H, _ = tiny_H1
    fr = tiny.frame
    sp_, lp = target_predicates(1, fr.e, fr.edge)
    K = H.select(scal=sp_, lin=lp)
    assert K.scal and K.lin
    chi = solve_plain(K, fr)
    R = K + bracket_st(frozen_quadratic(H, fr.e), chi)
    R = R.select(scal=sp_, lin=lp)
    for a in R.scal.values():
        assert abs(a) <= 1e-8
    for G in R.lin.values():
        assert np.max(np.abs(G)) <= 1e-8


def test_generator_fields_live_in_Xc(tiny, tiny_H1):
    H, _ = tiny_H1
    fr = tiny.frame
    gf = solve_modified(H, 1, fr)
    assert gf.chi.lin
    # the stored field B (chi = <J^-1 B, f>) must lie in X_c
    for B in gf.chi.lin.values():
        for xi in (fr.xi[0], np.conj(fr.xi[0])):
            assert abs(fr.omega(xi, B)) <= 1e-9
        assert np.max(np.abs(fr.Pc(B) - B)) <= 1e-9


def test_modified_solve_converges_fast(tiny, tiny_H1):
    gf = solve_modified(tiny_H1[0], 1, tiny.frame)
    assert len(gf.iterations) <= 5
    assert gf.residual <= 1e-8


def test_resonant_scalar_is_reported(tiny):
    fr = tiny.frame
    K = Poly(1, 1, 5)
    K.add_scalar(((2,), (2,), (0,)), 1.0)
    with pytest.raises(ResonanceError) as info:
        solve_plain(K, fr)
    assert info.value.kind == "scalar"
    assert info.value.key == ((2,), (2,), (0,))


# ----------------------------------------------------------------------------
# Birkhoff steps


def test_birkhoff_steps(tiny, tiny_nf):
    fr = tiny.frame
    assert [s.ell for s in tiny_nf.steps] == [1, 2, 3]
    for s in tiny_nf.steps:
        assert s.removable_max <= 1e-8
        assert s.diag_drift <= 1e-8
    assert removable_max(tiny_nf.H, fr.e, fr.edge, 3) <= 1e-8


def test_normal_form_keeps_resonant_terms(tiny, tiny_nf):
    fr = tiny.frame
    for key, a in tiny_nf.H.scal.items():
        if abs(a) > 1e-8 and zdeg(key) <= 4:
            assert classify(key, "scalar", fr.e, fr.edge) == "Z0"


def test_max_degree_two_runs_one_step(tiny, tiny_H1):
    res = normalize(tiny_H1[0], tiny.frame, max_degree=2)
    assert [s.ell for s in res.steps] == [1]


def test_max_degree_validated(tiny, tiny_H1):
    with pytest.raises(ValueError):
        normalize(tiny_H1[0], tiny.frame, max_degree=1)


def test_no_modes_is_a_no_op(cubic):
    H = Poly(0, 2, 3)
    res = normalize(H, cubic.frame)
    assert res.steps == []


def test_tolerance_violation_raises(tiny, tiny_H1):
    with pytest.raises(NormalFormError):
        normalize(tiny_H1[0], tiny.frame, tol=1e-30)
