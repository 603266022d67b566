import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solitonnf.grid import Grid, GridFunction, inner_arr
from solitonnf.model import (ModelError, Nonlinearity, cubic_nls, energy, grad_E, hess_E_apply,
                             momentum, potential_nls, random_field, validate_assumptions)


@pytest.fixture(scope="module")
def cub():
    # translations are exact only once the cubic products are resolved
    return cubic_nls(Grid(12.0, 256))


@pytest.fixture(scope="module")
def potm():
    return potential_nls(Grid(12.0, 64))


def test_nonlinearity_must_vanish():
    with pytest.raises(ModelError):
        Nonlinearity((0.0, 1.0, 2.0))
    with pytest.raises(ModelError):
        Nonlinearity((1.0, 0.0))


@given(st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_nonlinearity_derivative(s):
    B = Nonlinearity((0.0, 0.0, -0.5, 0.25))
    assert B.deriv(np.array(s), 1) == pytest.approx(-s + 0.75 * s * s, abs=1e-12)


def test_unknown_generator_rejected():
    with pytest.raises(ModelError):
        cubic_nls(Grid(5.0, 16), generators=("charge", "spin"))


@pytest.mark.parametrize("which", ["cub", "potm"])
def test_assumptions_hold(which, request):
    m = request.getfixturevalue(which)
    rep = validate_assumptions(m)
    assert rep["pass"], rep


@pytest.mark.parametrize("which", ["cub", "potm"])
def test_gradient_matches_energy(which, request, rng):
    m = request.getfixturevalue(which)
    U = GridFunction(m.grid, random_field(m.grid, rng))
    X = GridFunction(m.grid, random_field(m.grid, rng))
    h = 1e-5
    fd = (energy(m, U + X * h) - energy(m, U - X * h)) / (2 * h)
    assert fd == pytest.approx(inner_arr(m.grid, grad_E(m, U).values, X.values), rel=1e-8)


@pytest.mark.parametrize("which", ["cub", "potm"])
def test_hessian_symmetric(which, request, rng):
    m = request.getfixturevalue(which)
    U = GridFunction(m.grid, random_field(m.grid, rng))
    X = GridFunction(m.grid, random_field(m.grid, rng))
    Y = GridFunction(m.grid, random_field(m.grid, rng))
    a = inner_arr(m.grid, hess_E_apply(m, U, X).values, Y.values)
    b = inner_arr(m.grid, X.values, hess_E_apply(m, U, Y).values)
    assert a == pytest.approx(b, abs=1e-10)


def test_charge_of_gaussian(cub):
    g = cub.grid
    U = GridFunction(g, np.array([np.exp(-g.x ** 2), np.zeros_like(g.x)]))
    # 1/2 int e^{-2x^2} = sqrt(pi/2)/2
    assert momentum(cub, 0, U) == pytest.approx(0.5 * np.sqrt(np.pi / 2), abs=1e-12)


def test_group_is_a_flow(cub, rng):
    U = random_field(cub.grid, rng)
    a, b = np.array([0.3, -0.2]), np.array([0.1, 0.4])
    lhs = cub.group(a + b, U)
    rhs = cub.group(a, cub.group(b, U))
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_energy_invariant_under_group(cub, rng):
    U = random_field(cub.grid, rng)
    V = cub.group(np.array([0.7, 0.25]), U)
    assert cub.energy_arr(V) == pytest.approx(cub.energy_arr(U), abs=1e-11)


def test_wrong_grid_rejected(cub):
    other = GridFunction(Grid(12.0, 32), np.zeros((2, 32)))
    with pytest.raises(ModelError):
        energy(cub, other)
