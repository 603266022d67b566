import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solitonnf.grid import (Grid, GridError, GridFunction, dx_arr, inner, inner_arr, omega_form,
                            sigma_norm, symplectic_J)


def test_grid_rejects_odd_or_small():
    with pytest.raises(GridError):
        Grid(10.0, 31)
    with pytest.raises(GridError):
        Grid(10.0, 4)
    with pytest.raises(GridError):
        Grid(-1.0, 32)


def test_grid_geometry():
    g = Grid(10.0, 64)
    assert g.h == pytest.approx(20.0 / 64)
    assert g.x[0] == -10.0
    assert g.x[-1] == pytest.approx(10.0 - g.h)
    assert not g.x.flags.writeable


@given(st.integers(1, 6))
@settings(max_examples=12, deadline=None)
def test_dx_exact_on_trig(m):
    g = Grid(np.pi, 32)
    u = np.sin(m * g.x)[None]
    assert np.max(np.abs(dx_arr(g, u, 1) - m * np.cos(m * g.x))) < 1e-12
    assert np.max(np.abs(dx_arr(g, u, 2) + m * m * u)) < 1e-11


def test_dx_complex_step_clean():
    # the imaginary part must not pick up roundoff from a large real part
    g = Grid(5.0, 64)
    u = np.exp(-g.x ** 2)[None] * 1e3 + 1e-20j * np.cos(g.x)[None]
    d = dx_arr(g, u, 1)
    ref = dx_arr(g, np.cos(g.x)[None], 1)
    assert np.max(np.abs(d.imag / 1e-20 - ref)) < 1e-10


def test_gaussian_quadrature_spectral():
    g = Grid(12.0, 128)
    u = np.exp(-g.x ** 2)[None]
    assert inner_arr(g, u, u) == pytest.approx(np.sqrt(np.pi / 2), abs=1e-13)


def test_symplectic_J():
    J = symplectic_J(2)
    assert np.array_equal(J.T, -J)
    assert np.allclose(J @ J, -np.eye(4))


def test_omega_form_antisymmetric(rng):
    g = Grid(8.0, 32)
    u = GridFunction(g, rng.standard_normal((2, 32)))
    v = GridFunction(g, rng.standard_normal((2, 32)))
    J = symplectic_J(1)
    assert omega_form(u, v, J) == pytest.approx(-omega_form(v, u, J), abs=1e-13)
    assert omega_form(u, u, J) == pytest.approx(0.0, abs=1e-13)


def test_sigma_norm_ordering(rng):
    g = Grid(8.0, 64)
    u = GridFunction(g, np.exp(-g.x ** 2) * np.ones((2, 1)))
    n0 = sigma_norm(u, 0)
    assert n0 == pytest.approx(np.sqrt(inner(u, u)), rel=1e-12)
    assert sigma_norm(u, 2) > n0


def test_save_load_roundtrip(tmp_path, rng):
    g = Grid(6.0, 16)
    u = GridFunction(g, rng.standard_normal((2, 16)))
    u.save(tmp_path / "u")
    v = GridFunction.load(tmp_path / "u")
    assert v.grid.same_as(g)
    assert np.array_equal(u.values, v.values)
    u.to_csv(tmp_path / "u.csv")
    rows = (tmp_path / "u.csv").read_text().strip().splitlines()
    assert len(rows) == 17
