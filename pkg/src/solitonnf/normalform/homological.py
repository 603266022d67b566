"""Homological equations for one Birkhoff step.

At step ell (M0 = ell) the removable content is

    scalar   a_{mu nu k}  with |mu+nu| = M0 + 1 and e.(mu - nu) != 0,
    f-linear G_{mu nu k}  with |mu+nu| = M0     and |e.(nu - mu)| < edge,

at every rho order the cap allows.  The plain solve inverts the frozen
operator L0 = {H2, .} with H2 = e|z|^2 + 1/2 Omega(H f, f).  The rho
dependence of the quadratic part (e(rho), psi(rho), rho-dependent f^2
operators) is handled by iterating

    chi <- plain(K + [{H_Q, chi} - L0 chi]_removable),

which terminates because each pass raises the rho order of the correction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..linearize import ResolventError
from .poly import MarkerOp, Poly, bracket, bracket_st, key_weight, zdeg


class ResonanceError(RuntimeError):
    """A removable monomial has a (near) vanishing denominator."""

    def __init__(self, msg, key=None, kind=None, denominator=None):
        super().__init__(msg)
        self.key = key
        self.kind = kind
        self.denominator = denominator


class HomologicalError(RuntimeError):
    pass


def _mismatch(key, e):
    mu, nu, _ = key
    return float(np.dot(e, np.subtract(mu, nu, dtype=float)))


def classify(key, kind: str, e, edge: float, tol: float = 1e-9) -> str:
    """'Z0', 'Z1' or 'removable' for a scalar or f-linear key."""
    d = _mismatch(key, e)
    if kind == "scalar":
        return "Z0" if abs(d) < tol else "removable"
    if kind == "linear":
        return "Z1" if abs(d) >= edge else "removable"
    raise ValueError(f"unknown kind {kind!r}")


def target_predicates(ell: int, e, edge, tol=1e-9):
    """Key predicates for the content removed at step ell."""
    M0 = ell

    def scal(key):
        return zdeg(key) == M0 + 1 and classify(key, "scalar", e, edge, tol) == "removable"

    def lin(key):
        return zdeg(key) == M0 and classify(key, "linear", e, edge, tol) == "removable"

    return scal, lin


def quadratic_part(H: Poly, e, tol=1e-9) -> Poly:
    """H_Q: resonant |z|^2-type scalars, psi(rho) and the z-free f^2 operators."""
    def scal(key):
        d = zdeg(key)
        return d == 0 or (d == 2 and abs(_mismatch(key, e)) < tol)

    return H.select(scal=scal, quad=lambda k: zdeg(k) == 0)


def frozen_quadratic(H: Poly, e) -> Poly:
    """H2 = sum e_j |z_j|^2 + 1/2 Omega(H f, f) with frame frequencies."""
    out = H.empty_like()
    z0 = (0,) * H.n0
    for j in range(H.nmodes):
        dj = tuple(1 if i == j else 0 for i in range(H.nmodes))
        out.add_scalar((dj, dj, z0), e[j])
    out.add_quadratic(((0,) * H.nmodes, (0,) * H.nmodes, z0), 1.0, MarkerOp(H.space))
    return out


def _lin_norm(space, G):
    return float(np.sqrt(abs(space.pair(G, np.conj(G)))))


def poly_size(P: Poly) -> float:
    s = max([abs(v) for v in P.scal.values()], default=0.0)
    if P.lin:
        s = max(s, max(_lin_norm(P.space, G) for G in P.lin.values()))
    return s


@dataclass
class GeneratingFunction:
    """chi for one step, with solver diagnostics."""
    ell: int
    chi: Poly
    iterations: list = field(default_factory=list)
    residual: float = np.nan

    @property
    def size(self):
        return poly_size(self.chi)


def solve_plain(K: Poly, frame, res_tol: float = 1e-9, margin: float = 1e-6) -> Poly:
    """chi with K + L0 chi = 0, L0 the frozen operator {H2, .}."""
    e = frame.e
    chi = K.empty_like()
    for key, k in K.scal.items():
        d = _mismatch(key, e)
        if abs(d) < res_tol:
            raise ResonanceError(f"scalar monomial {key} is resonant (e.(mu-nu) = {d:.3e})",
                                 key=key, kind="scalar", denominator=d)
        chi.scal[key] = k / (1j * d)
    for key, G in K.lin.items():
        d = _mismatch(key, e)
        try:
            chi.lin[key] = -frame.resolvent_apply(1j * d, G, margin=margin)
        except ResolventError as exc:
            raise ResonanceError(f"f-linear monomial {key}: {exc}", key=key, kind="linear",
                                 denominator=d) from exc
    return chi


def _drop_low_weight(chi: Poly, tol: float) -> Poly:
    """Remove weight <= 2 entries of chi, which must be negligible.

    They come from coefficients that vanish exactly (|mu+nu| = 1 at rho = 0)
    and would break the grading of the Lie series.
    """
    out = chi.copy()
    for key in [k for k in out.scal if key_weight(k, 0) <= 2]:
        if abs(out.scal[key]) > tol:
            raise HomologicalError(f"generating function has weight-2 scalar {key}")
        del out.scal[key]
    for key in [k for k in out.lin if key_weight(k, 1) <= 2]:
        if np.max(np.abs(out.lin[key])) > tol:
            raise HomologicalError(f"generating function has weight-2 f-linear term {key}")
        del out.lin[key]
    return out


def _restrict(P: Poly, scal_pred, lin_pred) -> Poly:
    return P.select(scal=scal_pred, lin=lin_pred)


def solve_modified(H: Poly, ell: int, frame, transport: bool = True, tol: float = 1e-10,
                   max_iter: int = 20, res_tol: float = 1e-9, margin: float = 1e-6,
                   low_tol: float = 1e-6) -> GeneratingFunction:
    """Generating function for step ell, with the rho-dependent quadratic part included."""
    e, edge = frame.e, frame.edge
    sp, lp = target_predicates(ell, e, edge, res_tol)
    K = _restrict(H, sp, lp)
    HQ = quadratic_part(H, e, res_tol)
    H2 = frozen_quadratic(H, e)
    chi = solve_plain(K, frame, res_tol, margin)
    gf = GeneratingFunction(ell, chi)
    if chi.is_empty():
        gf.residual = 0.0
        return gf
    scale = max(poly_size(chi), 1e-300)
    for _ in range(max_iter):
        corr = _restrict(bracket(HQ, chi, transport) - bracket_st(H2, chi), sp, lp)
        new = solve_plain(K + corr, frame, res_tol, margin)
        upd = poly_size(new - chi)
        gf.iterations.append(upd)
        chi = new
        if upd <= tol * scale:
            break
    else:
        raise HomologicalError(f"step {ell}: modified solve did not settle "
                               f"(last update {gf.iterations[-1]:.3e})")
    gf.chi = _drop_low_weight(chi, low_tol)
    gf.residual = poly_size(_restrict(K + bracket(HQ, chi, transport), sp, lp))
    return gf
