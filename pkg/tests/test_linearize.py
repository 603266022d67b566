import numpy as np
import pytest

from solitonnf.grid import Grid, inner_arr
from solitonnf.linearize import (ResolventError, build_H, check_resonances, discrete_spectrum,
                                 kernel_residuals)
from solitonnf.model import potential_nls, random_field
from solitonnf.soliton import ground_state_guess, lambda_derivatives, solve_soliton


def test_operator_is_J_symmetric(pot):
    assert pot.operator.symmetry_defect() < 1e-10


@pytest.mark.parametrize("which", ["pot", "cubic"])
def test_kernel_and_jordan_chain(which, request):
    p = request.getfixturevalue(which)
    kr = kernel_residuals(p.operator, lambda_derivatives(p.model, p.point))
    assert max(kr["kernel"]) < 1e-8
    assert max(kr["generalized"]) < 1e-8


def test_pairing_identity(pot):
    G = pot.frame.geometry
    assert np.max(np.abs(G.pairing_matrix() - np.eye(2 * pot.model.n0))) < 1e-6


def test_frame_counts(pot, cubic):
    fr = pot.frame
    assert fr.n_modes == 1
    assert fr.N == 1
    assert fr.weight_cap == 5
    # N is the least integer with (N+1) e above the edge
    assert fr.N * fr.e[0] < fr.edge < (fr.N + 1) * fr.e[0]
    assert cubic.frame.n_modes == 0


def test_symplectic_normalization(pot):
    fr = pot.frame
    xi = fr.xi[0]
    assert abs(fr.omega(xi, np.conj(xi)) + 1j) < 1e-8
    assert abs(fr.omega(xi, xi)) < 1e-8


def test_projection_properties(pot, rng):
    fr = pot.frame
    m = pot.model
    X = random_field(m.grid, rng)
    Y = random_field(m.grid, rng)
    PX = fr.Pc(X)
    assert np.max(np.abs(fr.Pc(PX) - PX)) < 1e-10
    for xi in (fr.xi[0], np.conj(fr.xi[0])):
        assert abs(fr.omega(xi, PX)) < 1e-10
    assert inner_arr(m.grid, fr.Pc(X), Y) == pytest.approx(inner_arr(m.grid, X, fr.Pc_star(Y)),
                                                           abs=1e-11)


def test_split_recovers_H2(pot, rng):
    fr = pot.frame
    X = fr.geometry.P(random_field(pot.model.grid, rng))
    assert fr.H2(X) == pytest.approx(fr.H2_split(X), rel=1e-9)


def test_resolvent_solves(pot, rng):
    fr = pot.frame
    g = fr.Pc(random_field(pot.model.grid, rng)).astype(complex)
    z = 1.3j
    u = fr.resolvent_apply(z, g)
    r = fr.op.apply(u) - z * u - g
    assert np.max(np.abs(fr.Pc(r))) < 1e-9
    assert np.max(np.abs(fr.Pc(u) - u)) < 1e-9


def test_resolvent_refuses_eigenvalue(pot):
    fr = pot.frame
    ev = fr.xc_eigenvalues()
    target = ev[np.argmin(np.abs(ev - 5j))]
    with pytest.raises(ResolventError):
        fr.resolvent_apply(target, np.zeros((2, pot.model.grid.n_points)))


def test_resonance_checker():
    assert check_resonances(np.array([3.0]), 1)["pass"]
    bad = check_resonances(np.array([1.0, 2.0]), 1)
    assert not bad["pass"]


def test_small_amplitude_internal_mode():
    # linear Poschl-Teller: eigenvalues -4, -1, so the gap is 3 and the edge 4
    m = potential_nls(Grid(20.0, 128))
    U, w0 = ground_state_guess(m, 1e-2)
    pt = solve_soliton(m, U, p=[0.5 * 1e-4 * inner_arr(m.grid, U, U) / np.max(np.abs(U)) ** 2],
                       lam_guess=[w0])
    fr = discrete_spectrum(build_H(m, pt))
    assert np.max(np.abs(pt.Phi.values)) == pytest.approx(1e-2, rel=1e-2)
    assert fr.e[0] == pytest.approx(3.0, rel=0.05)
    assert fr.edge == pytest.approx(4.0, rel=0.05)
