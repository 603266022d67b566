"""Linearized operator, generalized kernel projections and the spectral frame.

Finite rank operators are stored as dyad stacks ``(V, W)`` meaning
``X -> sum_m V_m <W_m, X>``; the adjoint swaps the two stacks.  All field
operations accept leading batch axes and complex dtypes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import itertools
import math

import numpy as np
import scipy.linalg as sla

from .grid import GridFunction, combine_arr, gram_arr, inner_arr, pair_arr
from .model import Model
from .soliton import SolitonPoint, lambda_derivatives, nondegeneracy_matrix


class SpectralError(RuntimeError):
    pass


class NondegeneracyError(SpectralError):
    pass


class ResolventError(SpectralError):
    def __init__(self, msg, nearest=None):
        super().__init__(msg)
        self.nearest = nearest


class ChartError(ValueError):
    pass


def dyad_apply(grid, V, W, X):
    """sum_m V_m <W_m, X>; V, W have shape (batch, m, c, n).

    X may carry stack axes after the batch axes, (batch, extra, c, n).
    """
    extra = X.ndim - 2 - (V.ndim - 3)
    if extra > 0 and V.ndim > 3:
        ix = (Ellipsis,) + (None,) * extra + (slice(None),) * 3
        V, W = V[ix], W[ix]
    return combine_arr(pair_arr(grid, W, X), V)


# ----------------------------------------------------------------------------
# geometry of the soliton manifold at p


class Geometry:
    """Phi_p with p-derivatives and lam(p); every array may carry batch axes.

    Shapes: Phi (..., c, n), dPhi (..., n0, c, n) with dPhi[k] = d_{p_k} Phi,
    ddPhi (..., n0, n0, c, n), lam (..., n0), dlam (..., n0, n0) with
    dlam[k, j] = d_{p_k} lam_j.
    """

    def __init__(self, m: Model, Phi, dPhi, ddPhi=None, lam=None, dlam=None, p=None):
        self.m = m
        self.grid = m.grid
        self.Phi = Phi
        self.dPhi = dPhi
        self.ddPhi = ddPhi
        self.lam = lam
        self.dlam = dlam
        self.p = p
        n0 = m.n0
        self.DPhi = np.stack([m.diamond(j, Phi) for j in range(n0)], axis=-3)
        self.JDPhi = m.apply_J(self.DPhi)
        self.JinvdPhi = m.apply_Jinv(dPhi)
        # P_Ng X = -J D_j Phi <J^-1 d_j Phi, X> + d_j Phi <D_j Phi, X>
        self.V = np.concatenate([-self.JDPhi, dPhi], axis=-3)
        self.W = np.concatenate([self.JinvdPhi, self.DPhi], axis=-3)
        if ddPhi is not None:
            # DdPhi[..., j, k] = Diamond_j d_k Phi
            self.DdPhi = np.stack([m.diamond(j, dPhi) for j in range(n0)], axis=-4)
            self.JDdPhi = m.apply_J(self.DdPhi)
            self.JinvddPhi = m.apply_Jinv(ddPhi)

    @classmethod
    def from_family(cls, fam, p):
        p = np.asarray(p)
        Phi, dPhi, ddPhi = fam.phi(p, 2)
        lam, dlam = fam.lam(p, 1)
        return cls(fam.model, Phi, dPhi, ddPhi, lam, dlam, p)

    @classmethod
    def from_point(cls, m: Model, pt: SolitonPoint, gauge_ref=None):
        """First order geometry from exact lam derivatives (no family needed)."""
        A = nondegeneracy_matrix(m, pt, gauge_ref)  # A[k, j] = d p_k / d lam_j
        dl = lambda_derivatives(m, pt, gauge_ref)
        Ainv = np.linalg.inv(A)  # Ainv[j, k] = d lam_j / d p_k
        dPhi = np.einsum("jk,jcn->kcn", Ainv, dl)
        return cls(m, pt.Phi.values, dPhi, None, np.array(pt.lam), Ainv.T, np.array(pt.p))

    @property
    def n0(self):
        return self.m.n0

    # -- pairings ------------------------------------------------------------
    def pairing_matrix(self):
        """Gram of (J^-1 dPhi, D Phi) against (-J D Phi, dPhi); equals the identity."""
        return gram_arr(self.grid, self.W, self.V)

    def check_pairings(self, tol=1e-6):
        G = self.pairing_matrix()
        dev = float(np.max(np.abs(G - np.eye(2 * self.n0))))
        if not dev < tol:
            raise NondegeneracyError(f"generalized kernel pairing deviates by {dev:.3e}")
        return dev

    # -- projections -----------------------------------------------------------
    def PNg(self, X):
        return dyad_apply(self.grid, self.V, self.W, X)

    def PNg_star(self, Y):
        return dyad_apply(self.grid, self.W, self.V, Y)

    def P(self, X):
        return X - self.PNg(X)

    def Pstar(self, Y):
        return Y - self.PNg_star(Y)

    def _dV_dW(self, k):
        if self.ddPhi is None:
            raise ValueError("second derivatives of the family are required")
        dd = self.ddPhi[..., k, :, :, :]  # d_k d_j Phi over j
        Vk = np.concatenate([-self.JDdPhi[..., :, k, :, :], dd, -self.JDPhi, self.dPhi], axis=-3)
        Wk = np.concatenate([self.JinvdPhi, self.DPhi, self.m.apply_Jinv(dd),
                             self.DdPhi[..., :, k, :, :]], axis=-3)
        return Vk, Wk

    def dP(self, k, X):
        """d_{p_k} P(p) X = -d_{p_k} P_Ng(p) X."""
        Vk, Wk = self._dV_dW(k)
        return -dyad_apply(self.grid, Vk, Wk, X)

    def dP_star(self, k, Y):
        Vk, Wk = self._dV_dW(k)
        return -dyad_apply(self.grid, Wk, Vk, Y)

    def range_defect(self, X):
        """Pairings of X with the annihilators of range P(p)."""
        return inner_arr(self.grid, self.W, X[..., None, :, :])


def projection_transfer(g: Geometry, g0: Geometry, Rp, eps: float = np.inf):
    """Inverse of P(p) restricted to range P(p0): returns R0 in range P(p0), P(p)R0 = Rp."""
    if g.p is not None and g0.p is not None:
        dist = float(np.max(np.abs(np.asarray(g.p) - np.asarray(g0.p))))
        if dist > eps:
            raise ChartError(f"|p - p0| = {dist:.3e} exceeds chart radius {eps}")
    # R0 = Rp + sum_i a_i V_i(p); V(p) spans N_g(p), which P(p) annihilates
    A = inner_arr(g.grid, g0.W[..., :, None, :, :], g.V[..., None, :, :, :])
    b = -inner_arr(g.grid, g0.W, Rp[..., None, :, :])
    a = np.linalg.solve(A, b[..., None])[..., 0]
    return Rp + np.einsum("...m,...mcn->...cn", a, g.V)


# ----------------------------------------------------------------------------
# linearized operator


@dataclass
class LinearizedOperator:
    model: Model
    point: SolitonPoint
    matrix: np.ndarray

    def apply(self, X):
        m = self.model
        Phi = self.point.Phi.values
        return m.apply_J(m.hess_arr(Phi, X) - m.diamond_comb(self.point.lam, X))

    def symmetry_defect(self) -> float:
        """Operator norm of J^-1 H + H^T J^-1 relative to |H|."""
        Jinv = np.linalg.inv(self.model.J_matrix())
        S = Jinv @ self.matrix + self.matrix.T @ Jinv
        return float(np.linalg.norm(S, 2) / np.linalg.norm(self.matrix, 2))


def build_H(m: Model, pt: SolitonPoint, tol: float = 1e-8, residual_tol: float = 1e-8):
    from .soliton import residual_norm
    res = residual_norm(m, pt.Phi.values, pt.lam)
    if res > residual_tol:
        raise SpectralError(f"stale soliton: residual {res:.3e}")
    A = m.hess_matrix(pt.Phi.values)
    for l in range(m.n0):
        A = A - pt.lam[l] * m.diamond_matrix(l)
    H = m.J_matrix() @ A
    op = LinearizedOperator(m, pt, H)
    for j in range(m.n0):
        v = m.apply_J(m.diamond(j, pt.Phi.values))
        r = op.apply(v)
        nv = np.sqrt(inner_arr(m.grid, v, v))
        if np.sqrt(inner_arr(m.grid, r, r)) > tol * max(nv, 1.0):
            raise SpectralError("kernel identity H J Diamond Phi = 0 fails")
    return op


def kernel_residuals(op: LinearizedOperator, dlamPhi=None):
    """|H J D_j Phi| and, given d_lam Phi, |H d_lam_j Phi - J D_j Phi|."""
    m = op.model
    Phi = op.point.Phi.values
    g = m.grid
    out = {"kernel": [], "generalized": []}
    for j in range(m.n0):
        v = m.apply_J(m.diamond(j, Phi))
        r = op.apply(v)
        out["kernel"].append(float(np.sqrt(inner_arr(g, r, r))))
        if dlamPhi is not None:
            r2 = op.apply(np.asarray(dlamPhi[j])) - v
            out["generalized"].append(float(np.sqrt(inner_arr(g, r2, r2))))
    return out


# ----------------------------------------------------------------------------
# spectral frame


@dataclass
class SpectralFrame:
    op: LinearizedOperator
    geometry: Geometry
    e: np.ndarray
    xi: np.ndarray  # (nmodes, c, n) complex
    signs: np.ndarray
    edge: float
    N_j: np.ndarray
    eigenvalues: np.ndarray
    _lu_cache: dict = field(default_factory=dict, repr=False)
    _pc_matrix: np.ndarray = field(default=None, repr=False)

    @property
    def model(self) -> Model:
        return self.op.model

    @property
    def n_modes(self) -> int:
        return len(self.e)

    @property
    def N(self) -> int:
        return int(max(self.N_j)) if len(self.N_j) else 0

    @property
    def weight_cap(self) -> int:
        return 2 * self.N + 3

    def omega(self, u, v):
        return inner_arr(self.model.grid, self.model.apply_Jinv(u), v)

    # -- coordinates -----------------------------------------------------------
    def z_coords(self, X):
        """z_j = i Omega(X, conj xi_j) and its formal conjugate -i Omega(X, xi_j)."""
        m = self.model
        JX = m.apply_Jinv(X)[..., None, :, :]
        z = 1j * inner_arr(m.grid, JX, np.conj(self.xi))
        zb = -1j * inner_arr(m.grid, JX, self.xi)
        return z, zb

    def modes(self, z, zb):
        return (np.einsum("...j,jcn->...cn", z, self.xi)
                + np.einsum("...j,jcn->...cn", zb, np.conj(self.xi)))

    def split(self, X, check_tol=None):
        if check_tol is not None:
            d = np.max(np.abs(self.geometry.range_defect(X)))
            scale = np.sqrt(np.max(np.abs(inner_arr(self.model.grid, X, X)))) + 1e-300
            if d > check_tol * max(scale, 1.0):
                raise ChartError(f"field not in range P(p0): defect {d:.3e}")
        z, zb = self.z_coords(X)
        f = X - self.modes(z, zb)
        if np.isrealobj(X):
            f = f.real
        return z, zb, f

    def Pc(self, X):
        X0 = self.geometry.P(X)
        z, zb = self.z_coords(X0)
        out = X0 - self.modes(z, zb)
        return out.real if np.isrealobj(X) else out

    def Pc_star(self, Y):
        """Adjoint of P_c for the bilinear pairing."""
        m = self.model
        g = m.grid
        Y = np.asarray(Y)
        # adjoint of X -> xi_j z_j(X) with z_j(X) = i <J^-1 X, conj xi_j>
        a = inner_arr(g, self.xi, Y[..., None, :, :])
        b = inner_arr(g, np.conj(self.xi), Y[..., None, :, :])
        Jt = m.apply_J  # (J^-1)^T = J
        corr = (1j * np.einsum("...j,jcn->...cn", a, Jt(np.conj(self.xi)))
                - 1j * np.einsum("...j,jcn->...cn", b, Jt(self.xi)))
        out = self.geometry.Pstar(Y - corr)
        return out.real if np.isrealobj(Y) else out

    def pc_matrix(self):
        if self._pc_matrix is None:
            m = self.model
            D = m.dim
            E = np.eye(D).reshape(D, m.ncomp, m.grid.n_points)
            self._pc_matrix = self.Pc(E).reshape(D, D).T
        return self._pc_matrix

    def H2(self, X):
        """Quadratic form 1/2 Omega(H X, X) evaluated directly."""
        return 0.5 * self.omega(self.op.apply(X), X)

    def H2_split(self, X):
        z, zb, f = self.split(X)
        return float(np.real(np.sum(self.e * z * zb)) + 0.5 * self.omega(self.op.apply(f), f))

    # -- resolvent -------------------------------------------------------------
    def xc_eigenvalues(self):
        """Eigenvalues of H restricted to X_c: drop +-i e_j and the 2 n0 kernel values."""
        ev = np.asarray(self.eigenvalues)
        keep = np.ones(ev.size, bool)
        for e in self.e:
            for target in (1j * e, -1j * e):
                cand = np.where(keep)[0]
                keep[cand[np.argmin(np.abs(ev[cand] - target))]] = False
        cand = np.where(keep)[0]
        drop = cand[np.argsort(np.abs(ev[cand]))[:2 * self.model.n0]]
        keep[drop] = False
        return ev[keep]

    def resolvent_apply(self, z: complex, g, order: int = 0, margin: float = 1e-6):
        """u in X_c with (H P_c - z) u = P_c d^i g.

        The factored matrix is (H - z) P_c + (1 - P_c): it agrees with
        H P_c - z on X_c and stays invertible at z = 0 and z = +-i e_j.
        """
        m = self.model
        if order not in (0, 1):
            raise ValueError("derivative order must be 0 or 1")
        key = complex(z)
        if key not in self._lu_cache:
            ev = self.xc_eigenvalues()
            dist = np.abs(ev - key)
            i = int(np.argmin(dist))
            if dist[i] < margin:
                raise ResolventError(f"z={key} within {dist[i]:.2e} of eigenvalue {ev[i]}",
                                     nearest=complex(ev[i]))
            Pc = self.pc_matrix()
            eye = np.eye(m.dim)
            A = (self.op.matrix - key * eye) @ Pc + (eye - Pc)
            self._lu_cache[key] = sla.lu_factor(A)
        g = np.asarray(g)
        if order:
            from .grid import dx_arr
            g = dx_arr(m.grid, g, 1)
        rhs = self.Pc(g)
        shp = rhs.shape
        flat = rhs.reshape(-1, m.dim).T
        sol = sla.lu_solve(self._lu_cache[key], flat.astype(complex))
        return sol.T.reshape(shp)

    def report(self) -> dict:
        return {"e": [float(v) for v in self.e], "signs": [int(s) for s in self.signs],
                "edge": float(self.edge), "N_j": [int(n) for n in self.N_j], "N": self.N,
                "lambda": [float(v) for v in self.op.point.lam]}


def discrete_spectrum(op: LinearizedOperator, geometry: Geometry = None, *,
                      re_tol: float = 1e-6, zero_tol: float = 1e-3, edge_margin: float = 1e-2,
                      cluster_tol: float = 1e-6) -> SpectralFrame:
    m = op.model
    pt = op.point
    if geometry is None:
        geometry = Geometry.from_point(m, pt)
    edge = m.essential_edge(pt.lam)
    w, v = np.linalg.eig(op.matrix)
    sel = (np.abs(w.imag) > zero_tol) & (np.abs(w.imag) < edge - edge_margin)
    unstable = sel & (np.abs(w.real) > re_tol)
    if np.any(unstable) or np.any((np.abs(w.real) > re_tol) & (np.abs(w) > zero_tol)):
        bad = w[np.abs(w.real) > re_tol]
        raise SpectralError(f"linear instability: eigenvalue {bad[np.argmax(np.abs(bad.real))]}")
    pos = np.where(sel & (w.imag > 0))[0]
    pos = pos[np.argsort(w[pos].imag)]
    ep = w[pos].imag
    if len(ep) > 1 and np.min(np.diff(ep)) < cluster_tol:
        raise SpectralError("eigenvalue multiplicity above one is unsupported")
    c, n = m.ncomp, m.grid.n_points
    es, xis, signs = [], [], []
    for idx in pos:
        xi = v[:, idx].reshape(c, n)
        q = inner_arr(m.grid, m.apply_Jinv(xi), np.conj(xi))  # = -i s |q|
        s = 1 if q.imag < 0 else -1
        xi = xi / np.sqrt(abs(q))
        e = w[idx].imag
        if s < 0:
            xi = np.conj(xi)
            e = -e
        # deterministic phase: largest entry real positive
        flat = xi.ravel()
        k = int(np.argmax(np.abs(flat)))
        xi = xi * (abs(flat[k]) / flat[k])
        es.append(e)
        xis.append(xi)
        signs.append(s)
    es = np.array(es, float)
    N_j = np.array([math.ceil(edge / abs(e) - 1e-12) - 1 for e in es], int)
    xi_arr = np.array(xis).reshape(len(es), c, n) if es.size else np.zeros((0, c, n), complex)
    return SpectralFrame(op, geometry, es, xi_arr, np.array(signs, int), edge, N_j, w)


def check_resonances(frame_or_e, N: int, tol: float = 1e-9) -> dict:
    e = np.asarray(frame_or_e.e if isinstance(frame_or_e, SpectralFrame) else frame_or_e, float)
    nm = len(e)
    cap = 2 * N + 3
    best = np.inf
    worst_mu = None
    count = 0
    for mu in itertools.product(range(-cap, cap + 1), repeat=nm):
        if not any(mu) or sum(abs(x) for x in mu) > cap:
            continue
        count += 1
        val = abs(float(np.dot(mu, e)))
        if val < best:
            best, worst_mu = val, mu
    # no frequency may reappear among the others
    collide = any(abs(e[i] - e[j]) < tol for i in range(nm) for j in range(i + 1, nm))
    return {"min_combination": float(best) if count else None,
            "argmin": list(worst_mu) if worst_mu is not None else None,
            "n_combinations": count, "distinct": not collide,
            "pass": bool((count == 0 or best > tol) and not collide)}
