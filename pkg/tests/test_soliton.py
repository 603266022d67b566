import numpy as np
import pytest

from solitonnf.grid import Grid, inner_arr
from solitonnf.model import cubic_nls, potential_nls
from solitonnf.soliton import (SolitonError, branch_derivative, check_nondegeneracy, continue_branch,
                               ground_state_guess, lambda_derivatives, nondegeneracy_matrix,
                               residual_norm, sech_guess, solve_soliton)


@pytest.fixture(scope="module")
def cub_m():
    return cubic_nls(Grid(20.0, 256))


def exact_sech(m, omega):
    x = m.grid.x
    out = np.zeros((2, x.size))
    out[0] = np.sqrt(omega) / np.cosh(np.sqrt(omega) * x)
    return out


@pytest.mark.parametrize("omega", [1.0, 2.0])
def test_cubic_closed_form(cub_m, omega):
    pt = solve_soliton(cub_m, sech_guess(cub_m, omega), lam=[-omega, 0.0])
    d = pt.Phi.values - exact_sech(cub_m, omega)
    assert np.sqrt(inner_arr(cub_m.grid, d, d)) < 1e-6
    assert residual_norm(cub_m, pt.Phi.values, pt.lam) < 1e-10
    # charge of sqrt(w) sech(sqrt(w) x) is sqrt(w); momentum vanishes
    assert pt.p[0] == pytest.approx(np.sqrt(omega), abs=1e-8)
    assert pt.p[1] == pytest.approx(0.0, abs=1e-10)


def test_prescribed_momentum_recovers_multiplier(cub_m):
    pt = solve_soliton(cub_m, sech_guess(cub_m, 0.8), p=[1.2, 0.0], lam_guess=[-1.0, 0.0])
    assert pt.lam[0] == pytest.approx(-1.44, abs=1e-8)


def test_lambda_derivative_against_closed_form(cub_m):
    pt = solve_soliton(cub_m, sech_guess(cub_m, 1.0), lam=[-1.0, 0.0])
    d = lambda_derivatives(cub_m, pt)
    # d/dlam0 of sqrt(w) sech(sqrt(w) x) at w = -lam0 = 1
    h = 1e-5
    fd = (exact_sech(cub_m, 1 - h) - exact_sech(cub_m, 1 + h)) / (2 * h)
    assert np.max(np.abs(d[0] - fd)) < 1e-7
    # dp0/dlam0 = -1/(2 sqrt w)
    M = nondegeneracy_matrix(cub_m, pt)
    assert M[0, 0] == pytest.approx(-0.5, abs=1e-8)


def test_branch_continuation_and_fd(cub_m):
    seed = solve_soliton(cub_m, sech_guess(cub_m, 1.0), lam=[-1.0, 0.0])
    br = continue_branch(cub_m, seed, [-0.999, -1.0, -1.001])
    assert len(br.points) == 3
    assert check_nondegeneracy(br)["pass"]
    dPhi, dp = branch_derivative(br, 1)
    exact = lambda_derivatives(cub_m, br.points[1])[0]
    assert np.max(np.abs(dPhi.values - exact)) < 1e-6
    assert dp[0] == pytest.approx(-0.5, abs=1e-6)


def test_potential_ground_state():
    m = potential_nls(Grid(20.0, 128))
    U, w0 = ground_state_guess(m, 0.3)
    # linear ground state of -d^2 - 6 sech^2 sits at -4
    assert w0 == pytest.approx(-4.0, abs=0.05)
    pt = solve_soliton(m, U, p=[0.06], lam_guess=[w0])
    assert residual_norm(m, pt.Phi.values, pt.lam) < 1e-10
    assert pt.p[0] == pytest.approx(0.06, abs=1e-12)


def test_solver_needs_one_target(cub_m):
    with pytest.raises((SolitonError, ValueError)):
        solve_soliton(cub_m, sech_guess(cub_m), p=[1.0, 0.0], lam=[-1.0, 0.0])
