"""Hamiltonians E = E_K + E_P with an Abelian group of symmetries.

A model carries the kinetic Fourier symbol, an optional multiplier potential,
the nonlinearity B with derivatives, the symplectic matrix J and a list of
symmetry generators.  Two instances ship: translation invariant cubic(-quintic)
NLS with charge and momentum, and NLS with a Poschl-Teller well with charge
only.  All array kernels broadcast over leading batch axes and accept complex
input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .grid import (Grid, GridFunction, apply_matrix, dx_arr, real_multiplier,
                   inner_arr, symplectic_J)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Nonlinearity:
    """B(s) = sum_m c_m s^m with c_0 = c_1 = 0."""
    coeffs: tuple

    def __post_init__(self):
        c = tuple(float(a) for a in self.coeffs)
        if len(c) < 2 or c[0] != 0.0 or c[1] != 0.0:
            raise ModelError("B must satisfy B(0) = B'(0) = 0")
        object.__setattr__(self, "coeffs", c)

    def deriv(self, s, order: int = 0):
        c = np.asarray(self.coeffs)
        if order:
            c = npoly.polyder(c, order)
        # Horner keeps the evaluation complex-analytic
        out = np.zeros_like(s) + c[-1]
        for a in c[-2::-1]:
            out = out * s + a
        return out

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


def cubic_B(g: float = 1.0, quintic: float = 0.0) -> Nonlinearity:
    """Focusing B(s) = -g s^2/2 - q s^3/3."""
    if quintic:
        return Nonlinearity((0.0, 0.0, -g / 2.0, -quintic / 3.0))
    return Nonlinearity((0.0, 0.0, -g / 2.0))


GENERATORS = ("charge", "momentum")


@dataclass(frozen=True)
class Model:
    grid: Grid
    B: Nonlinearity
    generators: tuple = ("charge",)
    potential: np.ndarray | None = None
    potential_id: str = "none"
    n_pairs: int = 1
    kinetic_id: str = "laplacian"
    signature: np.ndarray | None = None
    name: str = "model"
    J: np.ndarray = field(init=False, repr=False, compare=False)
    Jinv: np.ndarray = field(init=False, repr=False, compare=False)
    ksym: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for g in self.generators:
            if g not in GENERATORS:
                raise ModelError(f"unknown generator {g!r}")
        J = symplectic_J(self.n_pairs)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "Jinv", np.linalg.inv(J))
        if self.kinetic_id != "laplacian":
            raise ModelError("only the -d^2/dx^2 kinetic operator is implemented")
        object.__setattr__(self, "ksym", self.grid.kr ** 2)
        S = np.eye(2 * self.n_pairs) if self.signature is None else np.asarray(self.signature, float)
        if not np.allclose(S, S.T) or np.min(np.linalg.eigvalsh(S)) <= 0:
            raise ModelError("signature form must be symmetric positive")
        object.__setattr__(self, "signature", S)
        if self.potential is not None:
            V = np.asarray(self.potential, dtype=float)
            if V.shape != (self.grid.n_points,):
                raise ModelError("potential samples have the wrong length")
            object.__setattr__(self, "potential", V)

    # -- sizes ---------------------------------------------------------------
    @property
    def n0(self) -> int:
        return len(self.generators)

    @property
    def ncomp(self) -> int:
        return 2 * self.n_pairs

    @property
    def dim(self) -> int:
        return self.ncomp * self.grid.n_points

    @property
    def generator_orders(self) -> tuple:
        return tuple(0 if g == "charge" else 1 for g in self.generators)

    # -- operators -----------------------------------------------------------
    def kinetic(self, U):
        out = real_multiplier(self.grid, U, self.ksym)
        if self.potential is not None:
            out = out + self.potential * U
        return out

    def diamond(self, l: int, U):
        g = self.generators[l]
        if g == "charge":
            return U
        return apply_matrix(self.J, dx_arr(self.grid, U, 1))

    def diamond_comb(self, c, U):
        """sum_l c_l Diamond_l U (c may carry batch axes)."""
        c = np.asarray(c)
        out = 0
        for l in range(self.n0):
            out = out + c[..., l, None, None] * self.diamond(l, U)
        return out

    def apply_J(self, U):
        return apply_matrix(self.J, U)

    def apply_Jinv(self, U):
        return apply_matrix(self.Jinv, U)

    def group(self, tau, U):
        """exp(J tau . Diamond) U (tau may carry batch axes)."""
        tau = np.asarray(tau)
        out = U
        for l, g in enumerate(self.generators):
            t = tau[..., l, None, None]
            if g == "charge":
                out = np.cos(t) * out + np.sin(t) * self.apply_J(out)
            else:
                # exp(J J d/dx t) = exp(-t d/dx): translation
                kr = self.grid.kr_odd
                if np.isrealobj(tau):
                    out = real_multiplier(self.grid, out, np.exp(-1j * t * kr))
                else:
                    # split exp(-i t k) into two real-preserving symbols so a
                    # complex step in tau picks up no FFT roundoff
                    ph = np.exp(-1j * t.real * kr)
                    b = t.imag * kr
                    out = (real_multiplier(self.grid, out, ph * np.cosh(b))
                           + 1j * real_multiplier(self.grid, out, -1j * ph * np.sinh(b)))
        return out

    # -- energy --------------------------------------------------------------
    def _s(self, U):
        return np.einsum("...in,ij,...jn->...n", U, self.signature, U)

    def energy_arr(self, U):
        ek = 0.5 * inner_arr(self.grid, self.kinetic(U), U)
        ep = self.grid.h * np.sum(self.B.deriv(self._s(U), 0), axis=-1)
        return ek + ep

    def grad_arr(self, U):
        s = self._s(U)
        SU = apply_matrix(self.signature, U)
        return self.kinetic(U) + 2.0 * self.B.deriv(s, 1)[..., None, :] * SU

    def hess_arr(self, U, X):
        s = self._s(U)
        SU = apply_matrix(self.signature, U)
        SX = apply_matrix(self.signature, X)
        uSx = np.sum(U * SX, axis=-2)
        return (self.kinetic(X) + 2.0 * self.B.deriv(s, 1)[..., None, :] * SX
                + 4.0 * (self.B.deriv(s, 2) * uSx)[..., None, :] * SU)

    def momentum_arr(self, U):
        """Vector of all momenta (last axis = generator index)."""
        return np.stack([0.5 * inner_arr(self.grid, self.diamond(l, U), U)
                         for l in range(self.n0)], axis=-1)

    # -- dense matrices (stacked component-major ordering) --------------------
    def _dense(self, op):
        D = self.dim
        eye = np.eye(D).reshape(D, self.ncomp, self.grid.n_points)
        cols = op(eye).reshape(D, D)
        return cols.T

    def hess_matrix(self, U):
        U = np.asarray(U)
        return self._dense(lambda X: self.hess_arr(U, X))

    def diamond_matrix(self, l: int):
        return self._dense(lambda X: self.diamond(l, X))

    def J_matrix(self):
        return np.kron(self.J, np.eye(self.grid.n_points))

    # -- spectral data ---------------------------------------------------------
    def essential_edge(self, lam) -> float:
        """Lower edge of |Im| over the essential spectrum of H_p."""
        lam = np.asarray(lam, float)
        edge = -lam[0]
        if self.n0 > 1:
            edge = edge - lam[1] ** 2 / 4.0
        return float(edge)

    def describe(self) -> dict:
        return {"name": self.name, "n_points": self.grid.n_points, "L": self.grid.half_width,
                "B": list(self.B.coeffs), "generators": list(self.generators),
                "potential": self.potential_id, "n_pairs": self.n_pairs}


# ----------------------------------------------------------------------------
# public wrappers on GridFunction


def _check(m: Model, U: GridFunction):
    if not m.grid.same_as(U.grid) or U.components != m.ncomp:
        raise ModelError("field does not live on the model grid")
    return U.values


def energy(m: Model, U: GridFunction) -> float:
    val = float(m.energy_arr(_check(m, U)))
    if not np.isfinite(val):
        raise ModelError("non-finite energy")
    return val


def grad_E(m: Model, U: GridFunction) -> GridFunction:
    return GridFunction(m.grid, m.grad_arr(_check(m, U)))


def hess_E_apply(m: Model, U: GridFunction, X: GridFunction) -> GridFunction:
    return GridFunction(m.grid, m.hess_arr(_check(m, U), _check(m, X)))


def momentum(m: Model, l: int, U: GridFunction) -> float:
    if not 0 <= l < m.n0:
        raise ModelError(f"generator index {l} out of range")
    return float(0.5 * inner_arr(m.grid, m.diamond(l, _check(m, U)), U.values))


def apply_diamond(m: Model, l: int, U: GridFunction) -> GridFunction:
    if not 0 <= l < m.n0:
        raise ModelError(f"generator index {l} out of range")
    return GridFunction(m.grid, m.diamond(l, _check(m, U)))


def random_field(grid: Grid, rng, ncomp: int = 2, width: float = 3.0, kmax: float = 4.0):
    """Smooth localized random field used as a probe."""
    n = grid.n_points
    spec = rng.standard_normal((ncomp, n)) + 1j * rng.standard_normal((ncomp, n))
    spec *= np.exp(-(grid.k / kmax) ** 2)
    vals = np.fft.ifft(spec, axis=-1).real
    vals *= np.exp(-(grid.x / width) ** 2)
    vals /= np.sqrt(inner_arr(grid, vals, vals))
    return vals


# ----------------------------------------------------------------------------
# shipped instances


def cubic_nls(grid: Grid, g: float = 1.0, quintic: float = 0.0,
              generators=("charge", "momentum")) -> Model:
    return Model(grid=grid, B=cubic_B(g, quintic), generators=tuple(generators),
                 name="cubic_nls" if not quintic else "cubic_quintic_nls")


def poschl_teller(grid: Grid, depth: int = 2) -> np.ndarray:
    return -depth * (depth + 1) / np.cosh(grid.x) ** 2


def potential_nls(grid: Grid, depth: int = 2, g: float = 1.0, generators=("charge",)) -> Model:
    return Model(grid=grid, B=cubic_B(g), generators=tuple(generators),
                 potential=poschl_teller(grid, depth), potential_id=f"poschl_teller_{depth}",
                 name="potential_nls")


# ----------------------------------------------------------------------------
# assumption checks


def validate_assumptions(m: Model, n_probes: int = 6, seed: int = 0, tol: float = 1e-11) -> dict:
    rng = np.random.default_rng(seed)
    g = m.grid
    probes = [random_field(g, rng, m.ncomp) for _ in range(n_probes)]
    comm_J = comm_gen = selfadj = pb = 0.0
    for a, b in zip(probes, probes[1:] + probes[:1]):
        for l in range(m.n0):
            da = m.diamond(l, a)
            comm_J = max(comm_J, np.max(np.abs(m.apply_J(da) - m.diamond(l, m.apply_J(a)))))
            selfadj = max(selfadj, abs(inner_arr(g, da, b) - inner_arr(g, a, m.diamond(l, b))))
            for k in range(m.n0):
                comm_gen = max(comm_gen, np.max(np.abs(
                    m.diamond(k, da) - m.diamond(l, m.diamond(k, a)))))
            # {Pi_l, E}(U) = <Diamond_l U, J grad E(U)>
            U = 0.7 * a + 0.3 * b
            scale = np.sqrt(inner_arr(g, m.grad_arr(U), m.grad_arr(U)))
            pb = max(pb, abs(inner_arr(g, m.diamond(l, U), m.apply_J(m.grad_arr(U)))) / scale)
    # |B(|z|^2)| ~ |z|^{2 deg} must sit below |z|^{p-1} with p in (2, 6]
    p_exp = 2 * m.B.degree + 1
    s = np.logspace(0, 2, 20)
    growth = np.abs(m.B.deriv(s ** 2)) / s ** (p_exp - 1)
    items = {
        "commutator_J": float(comm_J),
        "commutator_generators": float(comm_gen),
        "selfadjointness": float(selfadj),
        "poisson_momentum_energy": float(pb),
    }
    report = {name: {"value": v, "pass": bool(v < tol)} for name, v in items.items()}
    report["B_vanishing"] = {"value": float(abs(m.B.deriv(0.0)) + abs(m.B.deriv(0.0, 1))),
                             "pass": bool(m.B.coeffs[0] == 0 and m.B.coeffs[1] == 0)}
    report["B_growth"] = {"value": float(np.max(growth)), "exponent": p_exp,
                          "pass": bool(2 < p_exp <= 6 and np.all(np.isfinite(growth)))}
    report["pass"] = all(v["pass"] for v in report.values() if isinstance(v, dict))
    return report
