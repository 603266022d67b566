"""Self-checks for the bracket engine: random polynomials and the Jacobi identity."""
from __future__ import annotations

import numpy as np

from ..model import random_field
from .poly import FSpace, Poly, bracket, monomials


def random_poly(space: FSpace, rng, nmodes: int = 1, cap: int = 30, zmax: int = 3,
                rho_max: int = 1, linear: bool = True) -> Poly:
    """Scalar plus f-linear polynomial with random coefficients (no f^2 part)."""
    m = space.model
    n0 = m.n0
    P = Poly(nmodes, n0, cap, space)
    ks = [(0,) * n0]
    if rho_max >= 1:
        ks += [tuple(int(i == j) for i in range(n0)) for j in range(n0)]
    for d in range(1, zmax + 1):
        for mu, nu in monomials(nmodes, d):
            for k in ks:
                P.add_scalar((mu, nu, k), rng.standard_normal() + 1j * rng.standard_normal())
    if linear:
        for d in range(0, zmax):
            for mu, nu in monomials(nmodes, d):
                for k in ks:
                    G = random_field(m.grid, rng, m.ncomp) + 1j * random_field(m.grid, rng, m.ncomp)
                    P.add_linear((mu, nu, k), space.to_G(G))
    return P


def jacobi_defect(A: Poly, B: Poly, C: Poly) -> float:
    """Largest scalar or f-linear coefficient of the cyclic sum (frozen bracket).

    f-cubic terms are not stored, which only affects the f^2 part of the sum,
    so the f-degree <= 1 content must cancel exactly.
    """
    def br(F, G):
        return bracket(F, G, transport=False)

    J = br(A, br(B, C)) + br(B, br(C, A)) + br(C, br(A, B))
    s = max([abs(v) for v in J.scal.values()], default=0.0)
    g = max([float(np.max(np.abs(v))) for v in J.lin.values()], default=0.0)
    return float(max(s, g))


def jacobi_check(space: FSpace, seed: int = 0, nmodes: int = None, trials: int = 2) -> dict:
    """Relative Jacobi defect over a few random triples."""
    rng = np.random.default_rng(seed)
    nm = space.frame.n_modes if nmodes is None else nmodes
    worst = 0.0
    for _ in range(trials):
        A, B, C = (random_poly(space, rng, nm) for _ in range(3))
        scale = max((abs(v) for P in (A, B, C) for v in P.scal.values()), default=1.0) ** 3
        worst = max(worst, jacobi_defect(A, B, C) / max(scale, 1.0))
    return {"defect": worst, "trials": trials}
