"""Moser (Darboux) change of coordinates on the modulation chart.

Tangent vectors are triples ``(V_tau, V_Pi, V_R)`` in the coordinates
(tau, Pi, R).  Writing the differential of the reconstruction as

    dU(V) = exp(J tau.Diamond) [V_R + sum_m g_m l_m(V)]

with 4 n0 finite-rank terms, the pulled back form is

    Omega(V, W) = <J^-1 V_R, W_R> + sum_m (l_m(V) k_m(W) - k_m(V) l_m(W))
                  + sum_mn G_mn l_m(V) l_n(W),

k_m(V) = <J^-1 g_m, V_R>, G_mn = <J^-1 g_m, g_n>.  The Moser equation
i_X Omega_t = -alpha then closes on the scalars (l_m(X), k_m(X), X_tau, X_Pi).
Everything here accepts batch axes and complex input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .grid import combine_arr, gram_arr, inner_arr, pair_arr
from .linearize import ChartError
from .modulation import Chart, p_ext


class DarbouxError(RuntimeError):
    pass


class FlowEscapeError(DarbouxError):
    def __init__(self, msg, exit_time=None):
        super().__init__(msg)
        self.exit_time = exit_time


def _ip(chart, a, b):
    return inner_arr(chart.grid, a, b)


@dataclass
class FormPieces:
    """Finite-rank data of Omega - Omega_0 and of alpha at one (batched) point."""
    g: np.ndarray        # (..., 4n0, c, n)
    Ltau: np.ndarray     # (..., 4n0, n0)
    LPi: np.ndarray      # (..., 4n0, n0)
    Lr: np.ndarray       # (..., 4n0, c, n)
    Kr: np.ndarray       # (..., 4n0, c, n)  J^-1 g
    G: np.ndarray        # (..., 4n0, 4n0)
    dia: np.ndarray      # (..., 4n0, n0) coefficient of Diamond_j R inside Lr
    a_Pi: np.ndarray     # (..., n0)
    a_R: np.ndarray      # (..., c, n)
    a_dia: np.ndarray    # (..., n0) coefficient of Diamond_j R inside a_R
    M: np.ndarray
    p: np.ndarray


def form_pieces(chart: Chart, Pi, rho, R, degeneracy_tol: float = 1e-6, g=None) -> FormPieces:
    m = chart.model
    n0 = m.n0
    if g is None:
        g = chart.geometry(p_ext(chart, rho, R, Pi=Pi))
    p = g.p
    g0 = chart.g0
    PR = g.P(R)
    Up = g.Phi + PR
    dPR = np.stack([g.dP(k, R) for k in range(n0)], axis=-3)
    T = g.dPhi + dPR
    DiaPR = np.stack([m.diamond(j, PR) for j in range(n0)], axis=-3)
    M = np.eye(n0) + gram_arr(chart.grid, DiaPR, dPR)
    det = np.linalg.det(M)
    if np.min(np.abs(det)) < degeneracy_tol:
        raise ChartError("alpha denominator degenerate; shrink the chart")
    Minv = np.linalg.inv(M)
    C = g.Pstar(DiaPR)  # dPi_j(V) = (M dp)_j + <C_j, V_R>
    JDU = m.apply_J(np.stack([m.diamond(j, Up) for j in range(n0)], axis=-3))
    gv = np.concatenate([JDU, T, g.JDPhi, -g.dPhi], axis=-3)
    batch = R.shape[:-2]
    z = np.zeros(batch + (n0, n0), dtype=np.result_type(M, float))
    I = np.broadcast_to(np.eye(n0), batch + (n0, n0))
    Ltau = np.concatenate([I, z, z, z], axis=-2)
    LPi = np.concatenate([z, Minv, z, z], axis=-2)
    zf = np.zeros_like(T)
    Lr_B = -np.einsum("...kj,...jcn->...kcn", Minv, C)
    Lr = np.concatenate([zf, Lr_B, np.broadcast_to(g.JinvdPhi, T.shape),
                         np.broadcast_to(g.DPhi, T.shape)], axis=-3)
    dia = np.concatenate([z, -Minv, z, z], axis=-2)
    Kr = m.apply_Jinv(gv)
    G = gram_arr(chart.grid, Kr, gv)
    # alpha(V) = 1/2 <J^-1 R, (P(p) - P0) V_R> + b.dp(V), b_k = 1/2 <J^-1 PR, d_k P R>
    JR = m.apply_Jinv(R)
    b = 0.5 * pair_arr(chart.grid, dPR, m.apply_Jinv(PR))
    beta = np.einsum("...kj,...k->...j", Minv, b)
    a_R = 0.5 * (g.Pstar(JR) - g0.Pstar(JR)) - combine_arr(beta, C)
    return FormPieces(gv, Ltau, LPi, Lr, Kr, G, dia, beta, a_R, -beta, M, p)


def _ell(chart, fp: FormPieces, V):
    Vt, VP, VR = V
    return (np.einsum("...mj,...j->...m", fp.Ltau, Vt) + np.einsum("...mj,...j->...m", fp.LPi, VP)
            + _ip(chart, fp.Lr, VR[..., None, :, :]))


def _kap(chart, fp: FormPieces, V):
    return _ip(chart, fp.Kr, V[2][..., None, :, :])


def omega0(chart: Chart, V, W):
    Vt, VP, VR = V
    Wt, WP, WR = W
    return (np.sum(Vt * WP, axis=-1) - np.sum(VP * Wt, axis=-1)
            + _ip(chart, chart.model.apply_Jinv(VR), WR))


def omega_diff(chart: Chart, fp: FormPieces, V, W):
    """(Omega - Omega_0)(V, W)."""
    lV, lW = _ell(chart, fp, V), _ell(chart, fp, W)
    kV, kW = _kap(chart, fp, V), _kap(chart, fp, W)
    return (np.sum(lV * kW - kV * lW, axis=-1) + np.einsum("...m,...mn,...n->...", lV, fp.G, lW)
            - np.sum(V[0] * W[1], axis=-1) + np.sum(V[1] * W[0], axis=-1))


def omega(chart: Chart, fp: FormPieces, V, W, t: float = 1.0):
    """Omega_t = Omega_0 + t (Omega - Omega_0)."""
    return omega0(chart, V, W) + t * omega_diff(chart, fp, V, W)


def alpha_eval(chart: Chart, fp: FormPieces, V):
    return np.sum(fp.a_Pi * V[1], axis=-1) + _ip(chart, fp.a_R, V[2])


def alpha_form(chart: Chart, Pi, rho, R) -> FormPieces:
    return form_pieces(chart, Pi, rho, R)


# ----------------------------------------------------------------------------
# Moser field


@dataclass
class DarbouxField:
    X_tau: np.ndarray
    X_Pi: np.ndarray
    X_R: np.ndarray
    A: np.ndarray   # coefficients of J Diamond_j R
    D: np.ndarray   # remainder field, X_R = A_j J Diamond_j R + D
    pieces: FormPieces

    @property
    def vector(self):
        return (self.X_tau, self.X_Pi, self.X_R)


def darboux_field(chart: Chart, t: float, Pi, rho, R, fp: FormPieces = None,
                  singular_tol: float = 1e-8) -> DarbouxField:
    m = chart.model
    n0 = m.n0
    g0 = chart.g0
    if fp is None:
        fp = form_pieces(chart, Pi, rho, R)
    nm = 4 * n0
    P0J = lambda X: g0.P(m.apply_J(X))
    GL = np.einsum("...mn,...ncx->...mcx", fp.G, fp.Lr, optimize=True)
    Bl = -t * P0J(fp.Kr + GL)
    Bk = t * P0J(fp.Lr)
    B0 = -P0J(fp.a_R)
    gr = chart.grid
    Lr_Bl, Lr_Bk = gram_arr(gr, fp.Lr, Bl), gram_arr(gr, fp.Lr, Bk)
    Kr_Bl, Kr_Bk = gram_arr(gr, fp.Kr, Bl), gram_arr(gr, fp.Kr, Bk)
    batch = R.shape[:-2]
    N = 2 * nm + 2 * n0
    dt = np.result_type(fp.G, Bl, float)
    A = np.zeros(batch + (N, N), dtype=dt)
    rhs = np.zeros(batch + (N,), dtype=dt)
    sl, sk = slice(0, nm), slice(nm, 2 * nm)
    st, sp = slice(2 * nm, 2 * nm + n0), slice(2 * nm + n0, N)
    eye_m = np.eye(nm)
    A[..., sl, sl] = eye_m - Lr_Bl
    A[..., sl, sk] = -Lr_Bk
    A[..., sl, st] = -fp.Ltau
    A[..., sl, sp] = -fp.LPi
    rhs[..., sl] = pair_arr(gr, fp.Lr, B0)
    A[..., sk, sl] = -Kr_Bl
    A[..., sk, sk] = eye_m - Kr_Bk
    rhs[..., sk] = pair_arr(gr, fp.Kr, B0)
    # W_tau rows: (t-1) X_Pi + t [-k.Ltau + l G Ltau] = 0
    A[..., st, sk] = -t * np.swapaxes(fp.Ltau, -1, -2)
    A[..., st, sl] = t * np.swapaxes(np.einsum("...mn,...nj->...mj", fp.G, fp.Ltau), -1, -2)
    A[..., st, sp] = (t - 1.0) * np.eye(n0)
    # W_Pi rows: (1-t) X_tau + t [-k.LPi + l G LPi] = -a_Pi
    A[..., sp, sk] = -t * np.swapaxes(fp.LPi, -1, -2)
    A[..., sp, sl] = t * np.swapaxes(np.einsum("...mn,...nj->...mj", fp.G, fp.LPi), -1, -2)
    A[..., sp, st] = (1.0 - t) * np.eye(n0)
    rhs[..., sp] = -fp.a_Pi
    if singular_tol > 0:
        cond = np.linalg.cond(A)
        if np.any(~np.isfinite(cond)) or np.max(np.abs(cond)) > 1.0 / singular_tol:
            raise DarbouxError("Moser system singular; shrink the chart")
    s = np.linalg.solve(A, rhs[..., None])[..., 0]
    ell, kap = s[..., sl], s[..., sk]
    X_tau, X_Pi = s[..., st], s[..., sp]
    X_R = combine_arr(ell, Bl) + combine_arr(kap, Bk) + B0
    # coefficient of Diamond_j R inside the bracket that -P0 J acts on
    c = (t * (-np.einsum("...m,...mj->...j", kap, fp.dia)
              + np.einsum("...m,...mn,...nj->...j", ell, fp.G, fp.dia)) + fp.a_dia)
    Acoef = -c
    JDR = m.apply_J(np.stack([m.diamond(j, R) for j in range(n0)], axis=-3))
    D = X_R - combine_arr(Acoef, JDR)
    return DarbouxField(X_tau, X_Pi, X_R, Acoef, D, fp)


def moser_residual(chart: Chart, t: float, Pi, rho, R, probes, field: DarbouxField = None):
    """max_W |Omega_t(X, W) + alpha(W)| / |W| over probe tangent vectors."""
    if field is None:
        field = darboux_field(chart, t, Pi, rho, R)
    fp = field.pieces
    worst = 0.0
    for W in probes:
        val = omega(chart, fp, field.vector, W, t) + alpha_eval(chart, fp, W)
        nW = np.sqrt(np.sum(W[0] ** 2) + np.sum(W[1] ** 2) + _ip(chart, W[2], W[2]))
        worst = max(worst, float(np.max(np.abs(val))) / nW)
    return worst


# ----------------------------------------------------------------------------
# flow


@dataclass
class FlowResult:
    tau: np.ndarray
    Pi: np.ndarray
    R: np.ndarray
    q: np.ndarray
    S: np.ndarray
    rho: np.ndarray
    rho_defect: float
    nfev: int
    t_final: float


def _pack(*parts):
    return np.concatenate([np.ravel(p) for p in parts])


def integrate_flow(chart: Chart, tau, Pi, R, t_final: float = 1.0, rtol: float = 1e-12,
                   atol: float = 1e-14, escape_factor: float = 2.0) -> FlowResult:
    """Integrate the (tau, Pi, rho, q, S) system with R = exp(J q.Diamond) S."""
    m = chart.model
    n0 = m.n0
    shape = (m.ncomp, m.grid.n_points)
    if abs(t_final) > 2:
        raise ValueError("|t_final| must be at most 2")
    R = np.asarray(R, float)
    rho0 = chart.Pi(R)
    y0 = _pack(tau, Pi, rho0, np.zeros(n0), R)
    lim = escape_factor * chart.radius

    def unpack(y):
        return (y[:n0], y[n0:2 * n0], y[2 * n0:3 * n0], y[3 * n0:4 * n0],
                y[4 * n0:].reshape(shape))

    def rhs(t, y):
        _, Pi_, rho_, q, S = unpack(y)
        Rt = m.group(q, S)
        F = darboux_field(chart, t, Pi_, rho_, Rt)
        dS = m.group(-q, F.D)
        drho = np.array([_ip(chart, m.diamond(j, S), dS) for j in range(n0)])
        return _pack(F.X_tau, F.X_Pi, drho, F.A, dS)

    def escape(t, y):
        S = unpack(y)[4]
        return lim - np.sqrt(_ip(chart, S, S))
    escape.terminal = True

    if not np.sqrt(_ip(chart, R, R)) <= lim:
        raise FlowEscapeError("initial state outside the chart", 0.0)
    sol = solve_ivp(rhs, (0.0, t_final), y0, method="DOP853", rtol=rtol, atol=atol,
                    events=escape)
    if sol.status == 1:
        raise FlowEscapeError(f"flow left the chart at t={sol.t[-1]:.4f}", float(sol.t[-1]))
    if sol.status != 0:
        raise DarbouxError(sol.message)
    tau1, Pi1, rho1, q1, S1 = unpack(sol.y[:, -1])
    R1 = m.group(q1, S1)
    defect = float(np.max(np.abs(rho1 - chart.Pi(R1))))
    return FlowResult(tau1, Pi1, R1, q1, S1, rho1, defect, sol.nfev, t_final)


def integrate_frozen(chart: Chart, Pi, R, t_final: float = 1.0, rtol: float = 1e-12,
                     atol: float = 1e-14):
    """Frozen-rho flow dS/dt = D(t, Pi, rho = Pi(R0), S) without the phase part."""
    m = chart.model
    shape = (m.ncomp, m.grid.n_points)
    R = np.asarray(R, float)
    rho0 = chart.Pi(R)

    def rhs(t, y):
        F = darboux_field(chart, t, Pi, rho0, y.reshape(shape))
        return np.ravel(F.D)

    sol = solve_ivp(rhs, (0.0, t_final), np.ravel(R), method="DOP853", rtol=rtol, atol=atol)
    if sol.status != 0:
        raise DarbouxError(sol.message)
    return sol.y[:, -1].reshape(shape)


def flow_map(chart: Chart, x, **kw):
    tau, Pi, R = x
    fr = integrate_flow(chart, tau, Pi, R, **kw)
    return (fr.tau, fr.Pi, fr.R)


# ----------------------------------------------------------------------------
# audit


def random_tangent(chart: Chart, rng, scale_R: float = 1.0):
    from .model import random_field
    m = chart.model
    VR = chart.g0.P(random_field(m.grid, rng, m.ncomp))
    VR = scale_R * VR / np.sqrt(_ip(chart, VR, VR))
    return (rng.standard_normal(m.n0), rng.standard_normal(m.n0), VR)


def _gram(chart, fp, vecs):
    n = len(vecs)
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            out[a, b] = omega(chart, fp, vecs[a], vecs[b]) if fp is not None \
                else omega0(chart, vecs[a], vecs[b])
    return out


def verify_darboux(chart: Chart, x, n_samples: int = 6, h: float = 1e-4, seed: int = 0,
                   rtol: float = 1e-12, atol: float = 1e-14, tol: float = 1e-5) -> dict:
    """Compare (F^1)^* Omega with Omega_0 through a finite-difference Jacobian."""
    rng = np.random.default_rng(seed)
    tau, Pi, R = (np.asarray(v, float) for v in x)
    probes = [random_tangent(chart, rng) for _ in range(n_samples)]
    img = flow_map(chart, (tau, Pi, R), rtol=rtol, atol=atol)
    pushed = []
    for V in probes:
        plus = flow_map(chart, (tau + h * V[0], Pi + h * V[1], R + h * V[2]), rtol=rtol, atol=atol)
        minus = flow_map(chart, (tau - h * V[0], Pi - h * V[1], R - h * V[2]), rtol=rtol, atol=atol)
        pushed.append(tuple((a - b) / (2 * h) for a, b in zip(plus, minus)))
    G0 = _gram(chart, None, probes)
    fp_img = form_pieces(chart, img[1], chart.Pi(img[2]), img[2])
    G1 = _gram(chart, fp_img, pushed)
    fp_base = form_pieces(chart, Pi, chart.Pi(R), R)
    Gc = _gram(chart, fp_base, probes)
    nrm = np.linalg.norm(G0)
    dev = float(np.linalg.norm(G1 - G0) / nrm)
    ctrl = float(np.linalg.norm(Gc - G0) / nrm)
    return {"deviation": dev, "control_deviation": ctrl, "n_samples": n_samples, "h": h,
            "R_norm": float(np.sqrt(_ip(chart, R, R))),
            "pass": bool(dev <= tol)}


def frozen_scaling(chart: Chart, X, eps=(0.02, 0.01, 0.005), Pi=None, rtol: float = 1e-12,
                   atol: float = 1e-14) -> dict:
    """Gap between the full flow and the frozen-rho flow along R = eps X; fitted slope."""
    m = chart.model
    Pi = chart.p0 + 0.5 * chart.family.radius if Pi is None else np.asarray(Pi, float)
    errs = []
    for ep in eps:
        R = ep * X
        fr = integrate_flow(chart, np.zeros(m.n0), Pi, R, rtol=rtol, atol=atol)
        S = integrate_frozen(chart, Pi, R, rtol=rtol, atol=atol)
        errs.append(float(np.sqrt(_ip(chart, fr.R - S, fr.R - S))))
    slope = float(np.polyfit(np.log(eps), np.log(errs), 1)[0])
    return {"eps": [float(e) for e in eps], "errors": errs, "slope": slope}


def darboux_audit(chart: Chart, eps: float = 1e-2, samples: int = 6, probes: int = 20,
                  times=(0.0, 0.25, 0.5, 0.75, 1.0), seed: int = 0, moser_tol: float = 1e-7,
                  symplectic_tol: float = 1e-5, slope_target: float = 3.0,
                  slope_window: float = 0.3, scaling=True) -> dict:
    """Moser identity, pulled-back form and frozen-rho scaling at chart scale eps."""
    from .model import random_field
    if samples < 1 or probes < 1:
        raise ValueError("samples and probes must be positive")
    m = chart.model
    rng = np.random.default_rng(seed)
    X = chart.g0.P(random_field(m.grid, rng, m.ncomp))
    X = X / np.sqrt(_ip(chart, X, X))
    Pi = chart.p0.copy()
    R = eps * X
    out = {"eps": float(eps), "chart_radius": float(chart.radius), "failures": []}
    W = [random_tangent(chart, rng) for _ in range(probes)]
    res = [moser_residual(chart, t, Pi, chart.Pi(R), R, W) for t in times]
    out["moser"] = {"times": [float(t) for t in times], "residuals": res, "max": max(res),
                    "tol": moser_tol}
    if max(res) > moser_tol:
        out["failures"].append("moser")
    try:
        sym = verify_darboux(chart, (np.zeros(m.n0), Pi, R), n_samples=samples, seed=seed,
                             tol=symplectic_tol)
    except FlowEscapeError as exc:
        sym = {"deviation": None, "control_deviation": None, "error": str(exc), "pass": False}
    sym["tol"] = symplectic_tol
    out["symplecticity"] = sym
    if not sym["pass"] or not (sym["deviation"] < sym["control_deviation"]):
        out["failures"].append("symplecticity")
    if scaling:
        try:
            sc = frozen_scaling(chart, X)
            sc["pass"] = abs(sc["slope"] - slope_target) <= slope_window
        except (FlowEscapeError, DarbouxError) as exc:
            sc = {"error": str(exc), "pass": False}
        out["frozen_scaling"] = sc
        if not sc["pass"]:
            out["failures"].append("frozen_scaling")
    out["pass"] = not out["failures"]
    return out
