"""Modulation coordinates (tau, p, R) and the reduced variables (Pi, rho, z, f).

A state near the soliton manifold is written

    U = exp(J tau.Diamond) (Phi_p + P(p) R),    R in range P(p0),

with the chart reference p0 fixed per session.  The extended Hamiltonian
``K_ext(rho, R)`` used downstream treats rho as independent of R; on the
physical slice rho = Pi(R) it agrees with K restricted to Pi(U) = Pi_ref.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridFunction, inner_arr
from .linearize import ChartError, Geometry, SpectralFrame, projection_transfer
from .model import Model
from .soliton import SolitonFamily


@dataclass
class Chart:
    """Shared read-only context: family, reference geometry and spectral frame."""
    family: SolitonFamily
    frame: SpectralFrame = None
    radius_factor: float = 0.1
    p_iterations: int = 12

    def __post_init__(self):
        self.model: Model = self.family.model
        self.p0 = np.array(self.family.p0)
        self.g0 = Geometry.from_family(self.family, self.p0)
        self.Phi0 = self.g0.Phi
        self.E0 = float(self.model.energy_arr(self.Phi0))
        self.Pi_ref = self.p0.copy()
        self.radius = self.radius_factor * float(np.sqrt(inner_arr(self.model.grid, self.Phi0, self.Phi0)))

    @property
    def grid(self):
        return self.model.grid

    def geometry(self, p, order: int = 2) -> Geometry:
        if order >= 2:
            return Geometry.from_family(self.family, p)
        Phi, dPhi = self.family.phi(np.asarray(p), 1)
        return Geometry(self.model, Phi, dPhi)

    def Pi(self, U):
        """Momenta Pi_j(U) = 1/2 <Diamond_j U, U>, last axis j."""
        m = self.model
        return np.stack([0.5 * inner_arr(m.grid, m.diamond(j, U), U) for j in range(m.n0)],
                        axis=-1)


@dataclass
class ModulationCoords:
    tau: np.ndarray
    p: np.ndarray
    R: np.ndarray
    rho: np.ndarray
    Pi: np.ndarray
    z: np.ndarray = None
    zb: np.ndarray = None
    f: np.ndarray = None
    iterations: int = 0

    def report(self, grid=None) -> dict:
        out = {"tau": self.tau.tolist(), "p": self.p.tolist(), "Pi": self.Pi.tolist(),
               "rho": self.rho.tolist()}
        if self.z is not None:
            out["z"] = [[float(v.real), float(v.imag)] for v in self.z]
        if self.f is not None and grid is not None:
            from .grid import sigma_norm
            gf = GridFunction(grid, np.real(self.f))
            out["f_sigma_norms"] = [sigma_norm(gf, k) for k in range(3)]
        return out


# ----------------------------------------------------------------------------
# modulation equations


def _equations(chart: Chart, U, tau, p):
    m = chart.model
    g = chart.geometry(p)
    V = m.group(-tau, U)
    R = V - g.Phi
    F = -inner_arr(m.grid, g.JinvdPhi, R[None])
    G = -inner_arr(m.grid, g.DPhi, R[None])
    return np.concatenate([F, G]), g, R


def _jacobian(chart: Chart, g: Geometry, R):
    """d(F, G)/d(tau, p) from closed-form pairings."""
    m = chart.model
    n0 = m.n0
    h = m.grid
    I = np.eye(n0)
    # D_k d_j Phi = g.DdPhi[k, j]; second derivatives g.ddPhi[k, j]
    dFt = -inner_arr(h, g.DdPhi.transpose(1, 0, 2, 3), R) - I  # [j, k]
    dFp = inner_arr(h, m.apply_Jinv(R)[None, None], g.ddPhi).T  # Omega(R, d_k d_j Phi)
    JDD = np.stack([[m.apply_J(m.diamond(k, g.DPhi[j])) for k in range(n0)] for j in range(n0)])
    dGt = -inner_arr(h, JDD, R)  # [j, k]
    dGp = -inner_arr(h, g.DdPhi, R) + I  # [j, k] = -<R, D_j d_k Phi> + delta
    return np.block([[dFt, dFp], [dGt, dGp]])


def modulate(chart: Chart, U, seed=None, tol: float = 1e-13, max_iter: int = 40,
             split: bool = True) -> ModulationCoords:
    """Newton with backtracking on the orthogonality conditions F = G = 0."""
    m = chart.model
    U = np.asarray(U.values if isinstance(U, GridFunction) else U, float)
    n0 = m.n0
    if seed is None:
        tau, p = np.zeros(n0), chart.p0.copy()
    else:
        tau, p = (np.array(s, float) for s in seed)
    FG, g, R = _equations(chart, U, tau, p)
    nrm = np.max(np.abs(FG))
    for it in range(max_iter):
        if nrm <= tol:
            break
        step = np.linalg.solve(_jacobian(chart, g, R), -FG)
        t = 1.0
        while True:
            tau_n, p_n = tau + t * step[:n0], p + t * step[n0:]
            if not chart.family.in_box(p_n):
                t *= 0.5
            else:
                FGn, gn, Rn = _equations(chart, U, tau_n, p_n)
                if np.max(np.abs(FGn)) < nrm or t < 1e-3:
                    break
                t *= 0.5
            if t < 1e-3:
                raise ChartError("modulation Newton left the chart")
        tau, p, FG, g, R = tau_n, p_n, FGn, gn, Rn
        nrm = np.max(np.abs(FG))
    else:
        if nrm > 1e3 * tol:
            raise ChartError(f"modulation did not converge, residual {nrm:.3e}")
    R0 = projection_transfer(g, chart.g0, R)
    rho = chart.Pi(R0)
    c = ModulationCoords(tau, p, R0, rho, chart.Pi(U), iterations=it)
    if split and chart.frame is not None:
        c.z, c.zb, c.f = chart.frame.split(R0)
    return c


def reconstruct(chart: Chart, tau, p, R):
    g = chart.geometry(p)
    return chart.model.group(tau, g.Phi + g.P(R))


def reconstruct_coords(chart: Chart, c: ModulationCoords):
    return reconstruct(chart, c.tau, c.p, c.R)


def coordinate_differentials(chart: Chart, c: ModulationCoords, X):
    """(dtau, dp, dR) of the coordinate map along X (X may be batched)."""
    m = chart.model
    g = chart.geometry(c.p)
    X = np.asarray(X)
    Rp = g.P(c.R)
    Jac = _jacobian(chart, g, Rp)
    Xb = m.group(-c.tau, X)
    rhs = np.concatenate([inner_arr(m.grid, g.JinvdPhi, Xb[..., None, :, :]),
                          inner_arr(m.grid, g.DPhi, Xb[..., None, :, :])], axis=-1)
    d = np.linalg.solve(Jac, rhs[..., None])[..., 0]
    n0 = m.n0
    dtau, dp = d[..., :n0], d[..., n0:]
    V = g.Phi + Rp
    dRp = (Xb - np.einsum("...k,kcn->...cn", dtau, m.apply_J(np.stack([m.diamond(k, V) for k in range(n0)])))
           - np.einsum("...k,kcn->...cn", dp, g.dPhi))
    corr = sum(dp[..., k, None, None] * g.dP(k, c.R) for k in range(n0))
    dR = projection_transfer(g, chart.g0, g.P(dRp - corr))
    return dtau, dp, dR


def r_derivative(chart: Chart, c: ModulationCoords, X):
    return coordinate_differentials(chart, c, X)[2]


def coordinate_gradients(chart: Chart, c: ModulationCoords):
    """L2 gradients of tau_k and p_k as fields, shape (n0, c, n) each."""
    m = chart.model
    D = m.dim
    E = np.eye(D).reshape(D, m.ncomp, m.grid.n_points)
    dtau, dp, _ = coordinate_differentials(chart, c, E)
    h = m.grid.h
    shape = (m.ncomp, m.grid.n_points)
    return (dtau.T.reshape((m.n0,) + shape) / h, dp.T.reshape((m.n0,) + shape) / h)


def poisson(chart: Chart, gradF, gradG):
    """{F, G} = <grad F, J grad G>."""
    return inner_arr(chart.grid, gradF, chart.model.apply_J(gradG))


def tangent_fields(chart: Chart, c: ModulationCoords):
    """d/dtau_j and d/dp_j of the reconstruction at fixed R."""
    m = chart.model
    g = chart.geometry(c.p)
    U = reconstruct_coords(chart, c)
    dt = np.stack([m.apply_J(m.diamond(j, U)) for j in range(m.n0)])
    dpf = np.stack([m.group(c.tau, g.dPhi[j] + g.dP(j, c.R)) for j in range(m.n0)])
    return dt, dpf


# ----------------------------------------------------------------------------
# reduced variables


def Psi(chart: Chart, g: Geometry, R):
    """Psi_j = Pi_j(DR) + <R, Diamond_j DR> with D = P(p) - P(p0)."""
    m = chart.model
    DR = g.P(R) - chart.g0.P(R)
    return np.stack([0.5 * inner_arr(m.grid, m.diamond(j, DR), DR)
                     + inner_arr(m.grid, R, m.diamond(j, DR)) for j in range(m.n0)], axis=-1)


def p_ext(chart: Chart, rho, R, Pi=None, n_iter: int = None):
    """Fixed point of p = Pi - rho - Psi(p, R).

    The stopping test is shared by the whole batch, so the map stays analytic
    (complex step) and smooth across batch members (finite differences).
    """
    Pi = chart.Pi_ref if Pi is None else np.asarray(Pi)
    n_iter = chart.p_iterations if n_iter is None else n_iter
    rho = np.asarray(rho)
    p = Pi - rho + 0 * R[..., 0, 0, None]
    scale = 1.0 + float(np.max(np.abs(p)))
    for it in range(n_iter):
        new = Pi - rho - Psi(chart, chart.geometry(p, order=1), R)
        step = float(np.max(np.abs(new - p)))
        p = new
        if it >= 1 and step <= 1e-16 * scale:
            break
    return p


def reduced_variables(chart: Chart, c: ModulationCoords, check: bool = True):
    """(Pi, rho, z, f) of a state and the independently recovered p."""
    g = chart.geometry(c.p)
    Pi_val = c.p + chart.Pi(g.P(c.R))
    p_rec = p_ext(chart, c.rho, c.R, Pi=Pi_val)
    if check:
        res = p_rec - (Pi_val - c.rho - Psi(chart, chart.geometry(p_rec), c.R))
        if np.max(np.abs(res)) > 1e-10:
            raise ChartError("p recovery did not contract")
    return {"Pi": Pi_val, "rho": c.rho, "z": c.z, "f": c.f, "p": p_rec}


def k_hamiltonian(chart: Chart, U, p=None, Pi_ref=None):
    """K = E(U) - E(Phi_p0) - lam(p).(Pi(U) - Pi_ref); gauge invariant."""
    m = chart.model
    U = np.asarray(U.values if isinstance(U, GridFunction) else U)
    if p is None:
        p = modulate(chart, U, split=False).p
    lam = chart.family.lam(p)
    Pi_ref = chart.Pi_ref if Pi_ref is None else Pi_ref
    return float(m.energy_arr(U) - chart.E0 - np.dot(lam, chart.Pi(U) - Pi_ref))


# ----------------------------------------------------------------------------
# extended Hamiltonian on the level set Pi = Pi_ref


def K_ext(chart: Chart, rho, R, g: Geometry = None):
    """E(Phi_p + P(p)R) - E(Phi_p0) - lam(p).(Pi(R) - rho), p = p_ext(rho, R).

    ``g`` may pass the geometry at p_ext(rho, R) when the caller has it.
    """
    m = chart.model
    if g is None:
        g = chart.geometry(p_ext(chart, rho, R))
    U = g.Phi + g.P(R)
    return (m.energy_arr(U) - chart.E0
            - np.sum(g.lam * (chart.Pi(R) - rho), axis=-1))


def K_ext_grad(chart: Chart, rho, R, g: Geometry = None):
    """(d_rho K_ext, grad_R K_ext) in closed form."""
    m = chart.model
    n0 = m.n0
    if g is None:
        g = chart.geometry(p_ext(chart, rho, R))
    g0 = chart.g0
    PR = g.P(R)
    U = g.Phi + PR
    gE = m.grad_arr(U)
    dPR = np.stack([g.dP(k, R) for k in range(n0)], axis=-3)
    T = g.dPhi + dPR
    defect = chart.Pi(R) - rho
    kappa = inner_arr(m.grid, gE[..., None, :, :], T) - np.einsum("...kj,...j->...k", g.dlam, defect)
    DR = PR - g0.P(R)
    DiaDR = np.stack([m.diamond(j, DR) for j in range(n0)], axis=-3)
    DiaR = np.stack([m.diamond(j, R) for j in range(n0)], axis=-3)
    # d_{p_k} Psi_j
    dPsi = (inner_arr(m.grid, DiaDR[..., :, None, :, :], dPR[..., None, :, :, :])
            + inner_arr(m.grid, R[..., None, None, :, :],
                        np.stack([np.stack([m.diamond(j, dPR[..., k, :, :]) for k in range(n0)],
                                           axis=-3) for j in range(n0)], axis=-4)))
    gradPsi = (g.Pstar(DiaDR) - g0.Pstar(DiaDR) + DiaDR
               + g.Pstar(DiaR) - g0.Pstar(DiaR))
    A = np.eye(n0) + dPsi
    w = np.linalg.solve(np.swapaxes(A, -1, -2), kappa[..., None])[..., 0]
    grad = (g.Pstar(gE) - m.diamond_comb(g.lam, R)
            - np.einsum("...j,...jcn->...cn", w, gradPsi))
    # rho enters through p (dp/drho = -(I + dPsi)^-1) and the explicit +lam term
    drho = g.lam - w
    return drho, grad
