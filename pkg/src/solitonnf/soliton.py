"""Solitary waves as constrained critical points, branches and smooth families.

Newton iterations use the dense bordered system

    [ Hess E - lam.Diamond   -Diamond Phi   -J Diamond Phi_ref ] [dPhi]
    [ <Diamond Phi, .>            0                 0          ] [dlam]
    [ <J Diamond Phi_ref, .>      0                 0          ] [dmu ]

where the last block fixes the symmetry gauge (phase, and position when the
model is translation invariant) relative to a reference profile.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np
import scipy.linalg as sla

from .grid import GridFunction, inner_arr
from .model import Model


class SolitonError(RuntimeError):
    def __init__(self, msg, best_residual=None):
        super().__init__(msg)
        self.best_residual = best_residual


@dataclass(frozen=True)
class SolitonPoint:
    Phi: GridFunction
    lam: np.ndarray
    p: np.ndarray
    residual: float

    def to_dict(self):
        return {"lambda": [float(v) for v in self.lam], "p": [float(v) for v in self.p],
                "residual": float(self.residual),
                "peak": float(np.max(np.abs(self.Phi.values)))}


def residual_arr(m: Model, Phi, lam):
    return m.grad_arr(Phi) - m.diamond_comb(np.asarray(lam), Phi)


def residual_norm(m: Model, Phi, lam) -> float:
    r = residual_arr(m, Phi, lam)
    return float(np.sqrt(inner_arr(m.grid, r, r)))


def _gauge_vectors(m: Model, ref):
    return [m.apply_J(m.diamond(k, ref)) for k in range(m.n0)]


def _bordered(m: Model, Phi, lam, gauge, with_lambda: bool):
    D = m.dim
    h = m.grid.h
    A = m.hess_matrix(Phi)
    for l in range(m.n0):
        A = A - lam[l] * m.diamond_matrix(l)
    dPhi = [m.diamond(l, Phi).ravel() for l in range(m.n0)]
    gv = [g.ravel() for g in gauge]
    n0 = m.n0
    nb = 2 * n0 if with_lambda else n0
    M = np.zeros((D + nb, D + nb))
    M[:D, :D] = A
    col = D
    if with_lambda:
        for l in range(n0):
            M[:D, col] = -dPhi[l]
            M[col, :D] = h * dPhi[l]
            col += 1
    for k in range(n0):
        M[:D, col] = -gv[k]
        M[col, :D] = h * gv[k]
        col += 1
    return M


def solve_soliton(m: Model, guess, *, p=None, lam=None, gauge_ref=None, lam_guess=None,
                  tol: float = 1e-10, max_iter: int = 60, polish: int = 0) -> SolitonPoint:
    """Newton on grad E(Phi) = lam.Diamond Phi with either p or lam prescribed."""
    if (p is None) == (lam is None):
        raise ValueError("prescribe exactly one of p or lam")
    Phi = np.array(guess.values if isinstance(guess, GridFunction) else guess, dtype=float)
    if np.max(np.abs(Phi)) == 0:
        raise ValueError("guess must be nonzero")
    ref = Phi.copy() if gauge_ref is None else np.asarray(
        gauge_ref.values if isinstance(gauge_ref, GridFunction) else gauge_ref, float)
    gauge = _gauge_vectors(m, ref)
    n0, D = m.n0, m.dim
    with_lambda = p is not None
    if with_lambda:
        p = np.atleast_1d(np.asarray(p, float))
        if p.shape != (n0,):
            raise ValueError("target p has the wrong length")
        if lam_guess is None:
            lam_v = _rayleigh_lambda(m, Phi)
        else:
            lam_v = np.array(lam_guess, float)
    else:
        lam_v = np.atleast_1d(np.asarray(lam, float))
        if lam_v.shape != (n0,):
            raise ValueError("target lambda has the wrong length")
    mu = np.zeros(n0)
    best = np.inf
    for it in range(max_iter):
        F1 = residual_arr(m, Phi, lam_v) - sum(mu[k] * gauge[k] for k in range(n0))
        rows = [F1.ravel()]
        if with_lambda:
            rows.append(m.momentum_arr(Phi) - p)
        rows.append(np.array([inner_arr(m.grid, Phi, g) for g in gauge]))
        F = np.concatenate(rows)
        res = residual_norm(m, Phi, lam_v)
        best = min(best, res)
        if np.max(np.abs(Phi)) < 1e-12:
            raise SolitonError("converged to the zero field", best)
        if res <= tol and np.max(np.abs(F[D:])) <= tol:
            if polish <= 0:
                break
            polish -= 1
        M = _bordered(m, Phi, lam_v, gauge, with_lambda)
        step = np.linalg.solve(M, -F)
        Phi = Phi + step[:D].reshape(Phi.shape)
        if with_lambda:
            lam_v = lam_v + step[D:D + n0]
            mu = mu + step[D + n0:]
        else:
            mu = mu + step[D:]
    else:
        raise SolitonError(f"Newton did not converge in {max_iter} steps", best)
    if np.max(np.abs(Phi)) < 1e-8:
        raise SolitonError("converged to the zero field", best)
    return SolitonPoint(GridFunction(m.grid, Phi), lam_v.copy(), m.momentum_arr(Phi), res)


def _rayleigh_lambda(m: Model, Phi):
    """Least squares guess for lam from grad E(Phi) ~ lam.Diamond Phi."""
    g = m.grad_arr(Phi).ravel()
    A = np.column_stack([m.diamond(l, Phi).ravel() for l in range(m.n0)])
    return np.linalg.lstsq(A, g, rcond=None)[0]


def lambda_derivatives(m: Model, pt: SolitonPoint, gauge_ref=None) -> np.ndarray:
    """Exact d Phi / d lam_j from (Hess E - lam.Diamond) X = Diamond_j Phi."""
    Phi = pt.Phi.values
    ref = Phi if gauge_ref is None else np.asarray(
        gauge_ref.values if isinstance(gauge_ref, GridFunction) else gauge_ref)
    gauge = _gauge_vectors(m, ref)
    M = _bordered(m, Phi, pt.lam, gauge, with_lambda=False)
    D = m.dim
    lu = sla.lu_factor(M)
    out = []
    for j in range(m.n0):
        rhs = np.zeros(D + m.n0)
        rhs[:D] = m.diamond(j, Phi).ravel()
        out.append(sla.lu_solve(lu, rhs)[:D].reshape(Phi.shape))
    return np.array(out)


# ----------------------------------------------------------------------------
# branches


@dataclass
class SolitonBranch:
    model: Model
    points: list
    param_index: int = 0
    jacobians: list = field(default_factory=list)

    def table(self):
        return [pt.to_dict() for pt in self.points]

    def to_csv(self, path):
        n0 = self.model.n0
        cols = [f"lambda{i}" for i in range(n0)] + [f"p{i}" for i in range(n0)] + ["residual", "peak"]
        lines = [",".join(cols)]
        for pt in self.points:
            d = pt.to_dict()
            vals = d["lambda"] + d["p"] + [d["residual"], d["peak"]]
            lines.append(",".join(repr(float(v)) for v in vals))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def continue_branch(m: Model, seed: SolitonPoint, lam_values, param_index: int = 0,
                    gauge_ref=None, tol: float = 1e-10, fold_tol: float = 1e-8) -> SolitonBranch:
    """Secant predictor and Newton corrector along one lam component."""
    lam_values = np.asarray(lam_values, float)
    ref = seed.Phi if gauge_ref is None else gauge_ref
    pts = []
    prev = None
    cur = seed
    for val in lam_values:
        lam = np.array(seed.lam, float)
        lam[param_index] = val
        guess = cur.Phi.values
        if prev is not None:
            dl = cur.lam[param_index] - prev.lam[param_index]
            if dl != 0:
                slope = (cur.Phi.values - prev.Phi.values) / dl
                guess = cur.Phi.values + slope * (val - cur.lam[param_index])
        pt = solve_soliton(m, guess, lam=lam, gauge_ref=ref, tol=tol)
        jac = nondegeneracy_matrix(m, pt, gauge_ref=ref)
        if np.min(np.linalg.svd(jac, compute_uv=False)) < fold_tol:
            warnings.warn(f"fold detected near lambda={val}; branch stopped")
            break
        pts.append(pt)
        prev, cur = cur, pt
    br = SolitonBranch(m, pts, param_index)
    br.jacobians = [nondegeneracy_matrix(m, pt, gauge_ref=ref) for pt in pts]
    return br


def nondegeneracy_matrix(m: Model, pt: SolitonPoint, gauge_ref=None) -> np.ndarray:
    """[d p_k / d lam_j] through <d_lam_j Phi, Diamond_k Phi>."""
    dl = lambda_derivatives(m, pt, gauge_ref)
    Phi = pt.Phi.values
    return np.array([[inner_arr(m.grid, dl[j], m.diamond(k, Phi)) for j in range(m.n0)]
                     for k in range(m.n0)])


def branch_derivative(b: SolitonBranch, i: int):
    """Central difference in the varied lam component at branch point i."""
    pts = b.points
    if len(pts) < 2:
        raise ValueError("branch has fewer than two points")
    j = b.param_index
    if 0 < i < len(pts) - 1:
        a, c = pts[i - 1], pts[i + 1]
    else:
        warnings.warn("endpoint derivative is one-sided")
        a, c = (pts[0], pts[1]) if i == 0 else (pts[-2], pts[-1])
    dl = c.lam[j] - a.lam[j]
    if dl == 0:
        raise ValueError("degenerate branch spacing")
    dPhi = (c.Phi.values - a.Phi.values) / dl
    dp = (c.p - a.p) / dl
    return GridFunction(b.model.grid, dPhi), dp


def check_nondegeneracy(b: SolitonBranch, threshold: float = 1e-6) -> dict:
    """Smallest singular value of [d lam_i / d p_j] at every branch point."""
    sv = []
    for jac in b.jacobians:
        s = np.linalg.svd(np.asarray(jac, float), compute_uv=False)
        # d lam/d p is the inverse of d p/d lam, so its smallest singular value is 1/max(s)
        sv.append(0.0 if np.min(s) < 1e-14 * max(np.max(s), 1e-300) else float(1.0 / np.max(s)))
    return {"min_singular_values": sv,
            "pass": bool(all(v > threshold for v in sv))}


# ----------------------------------------------------------------------------
# initial guesses


def sech_guess(m: Model, omega: float = 1.0):
    x = m.grid.x
    phi = np.sqrt(omega) / np.cosh(np.sqrt(omega) * x)
    U = np.zeros((m.ncomp, m.grid.n_points))
    U[0] = phi
    return U


def ground_state_guess(m: Model, amplitude: float):
    """Scaled lowest eigenfunction of the linear operator -d^2 + V."""
    n = m.grid.n_points
    K = m._dense(lambda X: m.kinetic(X))[:n, :n]
    w, v = np.linalg.eigh(K)
    g = v[:, 0] / np.sqrt(m.grid.h)
    if g[np.argmax(np.abs(g))] < 0:
        g = -g
    U = np.zeros((m.ncomp, n))
    U[0] = amplitude * g / np.max(np.abs(g))
    return U, float(w[0])


def boost(m: Model, Phi, v: float):
    """Multiply by exp(-J v x / 2) (translation invariant model)."""
    x = m.grid.x
    c, s = np.cos(-0.5 * v * x), np.sin(-0.5 * v * x)
    return c * Phi + s * m.apply_J(Phi)


# ----------------------------------------------------------------------------
# smooth family p -> Phi_p


def _cheb_nodes(K: int):
    return np.cos(np.pi * (np.arange(K + 1) + 0.5) / (K + 1))


def _cheb_basis(s, K: int, nder: int = 2):
    """T_k(s) and derivatives for k <= K; s may be complex or batched."""
    s = np.asarray(s)
    T = [np.ones_like(s), s]
    dT = [np.zeros_like(s), np.ones_like(s)]
    ddT = [np.zeros_like(s), np.zeros_like(s)]
    for k in range(2, K + 1):
        T.append(2 * s * T[-1] - T[-2])
        dT.append(2 * T[-2] + 2 * s * dT[-1] - dT[-2])
        ddT.append(4 * dT[-2] + 2 * s * ddT[-1] - ddT[-2])
    out = [np.stack(T[:K + 1], axis=-1), np.stack(dT[:K + 1], axis=-1),
           np.stack(ddT[:K + 1], axis=-1)]
    return out[:nder + 1]


class SolitonFamily:
    """Tensor Chebyshev interpolant of gauge fixed solitons Phi_p, lam(p)."""

    def __init__(self, m: Model, center: SolitonPoint, radius, degree: int = 10,
                 tol: float = 1e-11):
        self.model = m
        self.center = center
        self.p0 = np.array(center.p, float)
        self.radius = np.broadcast_to(np.asarray(radius, float), (m.n0,)).copy()
        self.degree = int(degree)
        K = self.degree
        nodes = _cheb_nodes(K)
        n0 = m.n0
        shape = (K + 1,) * n0
        vals = np.zeros(shape + center.Phi.values.shape)
        lams = np.zeros(shape + (n0,))
        ref = center.Phi
        # sweep outward from the node closest to the centre
        order = sorted(np.ndindex(*shape), key=lambda idx: sum(abs(nodes[i]) for i in idx))
        solved = {}
        for idx in order:
            p = self.p0 + self.radius * nodes[list(idx)]
            near = min(solved, key=lambda q: sum((a - b) ** 2 for a, b in zip(q, idx)),
                       default=None)
            start = center if near is None else solved[near]
            pt = solve_soliton(m, start.Phi, p=p, gauge_ref=ref, lam_guess=start.lam, tol=tol,
                              polish=1)
            solved[idx] = pt
            vals[idx] = pt.Phi.values
            lams[idx] = pt.lam
        # values at nodes -> Chebyshev coefficients along each axis
        Tn = _cheb_basis(nodes, K, 0)[0]  # (K+1 nodes, K+1 modes)
        Tinv = np.linalg.inv(Tn)
        cPhi, clam = vals, lams
        for ax in range(n0):
            cPhi = np.moveaxis(np.tensordot(Tinv, cPhi, axes=([1], [ax])), 0, ax)
            clam = np.moveaxis(np.tensordot(Tinv, clam, axes=([1], [ax])), 0, ax)
        self.cPhi = cPhi
        self.clam = clam
        self.node_residual = max(pt.residual for pt in solved.values())

    def _eval(self, coeffs, p, nder):
        """Return value, gradient and Hessian in p (batched, complex ok)."""
        m = self.model
        n0 = m.n0
        p = np.asarray(p)
        s = (p - self.p0) / self.radius
        bases = [_cheb_basis(s[..., a], self.degree, 2) for a in range(n0)]
        tail = coeffs.shape[n0:]
        val = _tensor_eval(coeffs, bases, self.radius, (0,) * n0, p.ndim - 1)
        if nder == 0:
            return val
        grad = np.stack([_tensor_eval(coeffs, bases, self.radius,
                                      tuple(1 if b == a else 0 for b in range(n0)), p.ndim - 1)
                         for a in range(n0)], axis=p.ndim - 1)
        if nder == 1:
            return val, grad
        hess = np.empty(grad.shape[:p.ndim - 1] + (n0, n0) + tail, dtype=grad.dtype)
        for a in range(n0):
            for b in range(n0):
                ders = [0] * n0
                ders[a] += 1
                ders[b] += 1
                hess[(Ellipsis, a, b) + (slice(None),) * len(tail)] = _tensor_eval(
                    coeffs, bases, self.radius, tuple(ders), p.ndim - 1)
        return val, grad, hess

    def phi(self, p, nder: int = 0):
        """Phi_p and its p derivatives: shapes (..., c, n), (..., n0, c, n), (..., n0, n0, c, n)."""
        return self._eval(self.cPhi, p, nder)

    def lam(self, p, nder: int = 0):
        return self._eval(self.clam, p, nder)

    def in_box(self, p) -> bool:
        return bool(np.all(np.abs(np.asarray(p) - self.p0) <= self.radius))


def _tensor_eval(coeffs, bases, radius, ders, nbatch):
    """Contract coefficient axes with (derivative) Chebyshev bases."""
    n0 = len(bases)
    W = None
    for a in range(n0):
        B = bases[a][ders[a]] / radius[a] ** ders[a]
        B = B.reshape((-1, B.shape[-1]))
        W = B if W is None else (W[:, :, None] * B[:, None, :]).reshape(B.shape[0], -1)
    batch_shape = bases[0][0].shape[:-1]
    tail = coeffs.shape[n0:]
    out = W @ coeffs.reshape(W.shape[1], -1)
    return out.reshape(batch_shape + tail)
