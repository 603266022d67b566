"""Polynomial expansion of the post-Darboux Hamiltonian.

The composed Hamiltonian K o F^1 is replaced by the surrogate

    h_ext(rho, R) = K_ext(rho, R) + <grad_R K_ext(rho, R), Xbar(rho, R)>,

Xbar the time average of the Moser field by three point Gauss-Legendre.  The
Moser displacement has weight >= 3, so the surrogate agrees with K o F^1 up to
weight 5 (the first neglected terms are <grad K, O(5)> and Hess K[Xbar, Xbar],
both of weight >= 6).

In reduced variables the Hamiltonian reads

    h(z, w, f, rho) = h_ext(rho + Pi(R) - Pi(f), R),   R = z xi + w conj(xi) + f,

with w the formal conjugate of z and rho standing for Pi(f).  It is analytic in
(z, w, rho), so coefficients come from Cauchy sums over circles (FFT), which
isolates each (mu, nu, k) exactly up to aliasing from degree + M.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import itertools
import time

import numpy as np

from ..darboux import darboux_field, form_pieces
from ..grid import inner_arr
from ..modulation import Chart, K_ext, K_ext_grad, p_ext
from .poly import DenseOp, FSpace, LazyOp, MarkerOp, Poly, key_weight, zdeg

GL_T = (0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0)
GL_W = (5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0)


class BuildError(RuntimeError):
    pass


def _chunks(n, size):
    for a in range(0, n, size):
        yield slice(a, min(a + size, n))


class ComposedHamiltonian:
    """Batched evaluation of h and of its pieces in reduced variables."""

    def __init__(self, chart: Chart, chunk: int = 512):
        if chart.frame is None:
            raise BuildError("chart has no spectral frame")
        if chart.frame.n_modes > 1:
            raise BuildError("expansion supports at most one discrete mode")
        self.chart = chart
        self.frame = chart.frame
        self.m = chart.model
        self.nmodes = chart.frame.n_modes
        self.n0 = self.m.n0
        self.shape = (self.m.ncomp, self.m.grid.n_points)
        self.chunk = chunk
        self.evaluations = 0

    # -- pieces ------------------------------------------------------------------
    def modes(self, z, w):
        if self.nmodes == 0:
            return np.zeros(np.shape(z)[:-1] + self.shape, complex)
        return self.frame.modes(z, w)

    def _state(self, z, w, f, rho):
        """(rho_total, R) for reduced variables."""
        ch = self.chart
        R = self.modes(z, w) + f
        rho_t = rho + ch.Pi(R) - ch.Pi(f)
        return rho_t, R

    def _C_and_K(self, rho_t, R, want_K=True):
        ch = self.chart
        g = ch.geometry(p_ext(ch, rho_t, R))
        _, gK = K_ext_grad(ch, rho_t, R, g=g)
        fp = form_pieces(ch, ch.Pi_ref, rho_t, R, g=g)
        Xb = 0
        for t, wt in zip(GL_T, GL_W):
            Xb = Xb + wt * darboux_field(ch, t, ch.Pi_ref, rho_t, R, fp=fp, singular_tol=0).X_R
        C = inner_arr(ch.grid, gK, Xb)
        K = K_ext(ch, rho_t, R, g=g) if want_K else None
        return C, K

    def value(self, z, w, f, rho, part: str = "all"):
        """h (part 'all'), its Darboux correction ('C') or K_ext ('K'); batched over axis 0."""
        n = f.shape[0]
        out = np.zeros(n, complex)
        for sl in _chunks(n, self.chunk):
            rho_t, R = self._state(z[sl], w[sl], f[sl], rho[sl])
            self.evaluations += R.shape[0]
            if part == "K":
                out[sl] = K_ext(self.chart, rho_t, R)
                continue
            C, K = self._C_and_K(rho_t, R, want_K=(part == "all"))
            out[sl] = C if part == "C" else C + K
        return out

    def grad_K(self, z, w, f, rho):
        """Pairing gradient in f of K_ext(rho + Pi(R) - Pi(f), R)."""
        n = f.shape[0]
        out = np.zeros((n,) + self.shape, complex)
        m = self.m
        for sl in _chunks(n, self.chunk):
            rho_t, R = self._state(z[sl], w[sl], f[sl], rho[sl])
            self.evaluations += R.shape[0]
            drho, g = K_ext_grad(self.chart, rho_t, R)
            Rz = R - f[sl]
            out[sl] = g + m.diamond_comb(drho, Rz)
        return out


# ----------------------------------------------------------------------------
# Cauchy sampling grids


@dataclass
class CauchyGrid:
    """Product of circles: M_z points per z, w (radius r) and M_rho per rho (radius s)."""
    nmodes: int
    n0: int
    Mz: int
    r: float
    Mr: int
    s: float
    with_rho: bool = True

    def axes(self):
        ax = []
        if self.nmodes:
            ax += [(self.Mz, self.r)] * 2
        if self.with_rho:
            ax += [(self.Mr, self.s)] * self.n0
        return ax

    def points(self):
        """Arrays z, w (S, nmodes) and rho (S, n0) in C order over the axes."""
        ax = self.axes()
        idx = list(itertools.product(*[range(M) for M, _ in ax]))
        S = max(len(idx), 1)
        z = np.zeros((S, self.nmodes), complex)
        w = np.zeros((S, self.nmodes), complex)
        rho = np.zeros((S, self.n0), complex)
        for i, tup in enumerate(idx):
            vals = [rad * np.exp(2j * np.pi * a / M) for a, (M, rad) in zip(tup, ax)]
            pos = 0
            if self.nmodes:
                z[i, 0], w[i, 0] = vals[0], vals[1]
                pos = 2
            if self.with_rho:
                rho[i] = vals[pos:pos + self.n0]
        return z, w, rho, idx

    def mirror(self, idx):
        """Index of the conjugate sample (w̄, z̄, conj rho)."""
        ax = self.axes()
        tup = list(idx)
        out = []
        pos = 0
        if self.nmodes:
            out += [(-tup[1]) % ax[1][0], (-tup[0]) % ax[0][0]]
            pos = 2
        out += [(-a) % M for a, (M, _) in zip(tup[pos:], ax[pos:])]
        return tuple(out)

    def coefficients(self, values, keys):
        """Cauchy coefficients for keys (mu, nu, k) from samples over the grid."""
        ax = self.axes()
        shp = tuple(M for M, _ in ax)
        tail = values.shape[1:]
        V = values.reshape(shp + tail)
        nax = len(shp)
        if nax:
            V = np.fft.fftn(V, axes=tuple(range(nax))) / np.prod(shp)
        out = {}
        for mu, nu, k in keys:
            exps = []
            if self.nmodes:
                exps += [mu[0], nu[0]]
            if self.with_rho:
                exps += list(k)
            elif any(k):
                raise ValueError("rho order requested from a grid without rho circles")
            if any(e >= M for e, (M, _) in zip(exps, ax)):
                raise ValueError(f"key {(mu, nu, k)} aliases on this grid")
            scale = np.prod([rad ** e for e, (_, rad) in zip(exps, ax)]) if ax else 1.0
            out[(mu, nu, k)] = V[tuple(exps)] / scale
        return out


def _keys(nmodes, n0, cap, fdeg, zmax=None, kmax=None):
    from .poly import monomials, rho_orders
    out = []
    for d in range(0, cap - fdeg + 1):
        if zmax is not None and d > zmax:
            continue
        if nmodes == 0 and d > 0:
            continue
        for mu, nu in monomials(nmodes, d):
            for ko in range(0, (cap - fdeg - d) // 2 + 1):
                if kmax is not None and ko > kmax:
                    continue
                for k in rho_orders(n0, ko):
                    out.append((mu, nu, k))
    return out


# ----------------------------------------------------------------------------
# expansion


@dataclass
class BuildReport:
    cap: int
    radius_z: float
    radius_rho: float
    e_frame: list
    a_diag: list
    diag_deviation: float
    linear_leading: float
    quadratic_offdiag: float
    radius_consistency: float
    marker_deviation: float
    reality_defect: float
    evaluations: int
    seconds: float
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def default_radii(chart: Chart):
    fr = chart.frame
    if fr.n_modes:
        nxi = float(np.sqrt(np.real(inner_arr(chart.grid, fr.xi[0], np.conj(fr.xi[0])))))
        r = 0.25 * chart.radius / (2.0 * nxi)
    else:
        r = 0.0
    s = 0.2 * float(np.min(chart.family.radius))
    return r, s


def build_H1(chart: Chart, cap: int = None, radius_z: float = None, radius_rho: float = None,
             fd_step: float = 1e-6, lazy_step: float = None, diag_tol: float = 1e-6,
             linear_tol: float = 1e-7, consistency_tol: float = 1e-6, rho_order: int = None,
             verbose=None):
    """Expand the post-Darboux Hamiltonian to the weight cap.

    Returns (Poly, BuildReport).  f-quadratic content: the exact marker
    1/2 Omega(H f, f), dense Hessian blocks of the K_ext part up to weight 4,
    and matrix-free weight 4 blocks of the Darboux correction.  rho_order caps
    the rho Taylor order of every coefficient (None: whatever the cap allows).
    """
    t0 = time.time()
    fr = chart.frame
    cap = fr.weight_cap if cap is None else int(cap)
    comp = ComposedHamiltonian(chart)
    nm, n0 = comp.nmodes, comp.n0
    r_def, s_def = default_radii(chart)
    r = r_def if radius_z is None else radius_z
    s = s_def if radius_rho is None else radius_rho
    space = FSpace(fr)
    H = Poly(nm, n0, cap, space)
    shape = comp.shape
    D = int(np.prod(shape))
    log = verbose or (lambda msg: None)

    # -- scalars: h at f = 0 ------------------------------------------------------
    skeys = _keys(nm, n0, cap, 0, kmax=rho_order)
    Mz = max(cap + 3, 4)
    coefs = {}
    for rr in (r, 0.5 * r) if nm else (r,):
        grid = CauchyGrid(nm, n0, Mz, rr, 6, s)
        z, w, rho, _ = grid.points()
        f0 = np.zeros((z.shape[0],) + shape)
        vals = comp.value(z, w, f0, rho)
        coefs[rr] = grid.coefficients(vals, skeys)
    a = coefs[r]
    consistency = 0.0
    if nm:
        b = coefs[0.5 * r]
        for key in skeys:
            if key_weight(key, 0) <= cap - 1:
                consistency = max(consistency, abs(a[key] - b[key]) / max(1.0, abs(a[key])))
    for key in skeys:
        val = a[key]
        if zdeg(key) == 0 and not any(key[2]):
            continue  # psi(0) = 0 by construction
        H.add_scalar(key, val)
    log(f"scalars: {len(skeys)} keys, radius consistency {consistency:.2e}")

    # -- f-linear, K_ext part (closed form gradient) ------------------------------
    lkeys = [k for k in _keys(nm, n0, cap, 1, kmax=rho_order) if zdeg(k) > 0]
    if lkeys:
        grid = CauchyGrid(nm, n0, Mz, r, 4, s)
        z, w, rho, _ = grid.points()
        f0 = np.zeros((z.shape[0],) + shape)
        gv = comp.grad_K(z, w, f0, rho)
        GK = grid.coefficients(gv, lkeys)
        # f-linear, Darboux correction part (finite differences over grid directions)
        ckeys = [k for k in lkeys if key_weight(k, 1) >= 4]
        kmax = max(sum(k[2]) for k in ckeys) if ckeys else 0
        zmax = max(zdeg(k) for k in ckeys) if ckeys else 0
        gridC = CauchyGrid(nm, n0, zmax + 2, r, max(kmax + 2, 2), s)
        GC = _fd_gradient_coeffs(comp, gridC, ckeys, fd_step, shape)
        for key in lkeys:
            v = GK[key] + GC.get(key, 0.0)
            H.add_linear(key, space.to_G(v))
        log(f"f-linear: {len(lkeys)} keys ({len(ckeys)} with Darboux correction)")

    # -- f-quadratic ----------------------------------------------------------------
    marker = MarkerOp(space)
    H.add_quadratic(((0,) * nm, (0,) * nm, (0,) * n0), 1.0, marker)
    qkeys = [k for k in _keys(nm, n0, min(cap, 4), 2, kmax=rho_order) if any(k[0]) or any(k[1]) or any(k[2])]
    dense, marker_dev = _dense_K_hessians(comp, qkeys, r, s, fd_step * 10, shape, space)
    for key, A in dense.items():
        H.add_quadratic(key, 1.0, DenseOp(A, shape, label=f"K{key}"))
    ckq = [k for k in qkeys if key_weight(k, 2) >= 4]
    if ckq:
        fam = _LazyCHessians(comp, ckq, r, s, fd_step, lazy_step or 1e-3 * r if nm else 1e-5)
        for key in ckq:
            H.add_quadratic(key, 1.0, LazyOp(fam.getter(key), label=f"C{key}"))
    log(f"f-quadratic: marker + {len(dense)} dense + {len(ckq)} matrix-free blocks")

    reality = H.reality_defect()
    H.symmetrize()

    # -- checks -----------------------------------------------------------------------
    z0 = (0,) * n0
    a_diag, dev = [], 0.0
    for j in range(nm):
        dj = tuple(1 if i == j else 0 for i in range(nm))
        val = H.scal.get((dj, dj, z0), 0.0)
        a_diag.append(complex(val))
        dev = max(dev, abs(val - fr.e[j]))
    lead = 0.0
    off = 0.0
    for key, G in H.lin.items():
        if zdeg(key) == 1 and not any(key[2]):
            lead = max(lead, float(np.sqrt(abs(inner_arr(chart.grid, G, np.conj(G))))))
    for key, val in H.scal.items():
        if zdeg(key) == 2 and not any(key[2]) and key[0] != key[1]:
            off = max(off, abs(val))
    rep = BuildReport(cap, float(r), float(s), [float(x) for x in fr.e],
                      [[v.real, v.imag] for v in a_diag], float(dev), float(lead), float(off),
                      float(consistency), float(marker_dev), float(reality), comp.evaluations,
                      time.time() - t0)
    if dev > diag_tol:
        raise BuildError(f"a_dd(0) deviates from the frame frequency by {dev:.3e}")
    if lead > linear_tol:
        raise BuildError(f"|mu+nu|=1 f-linear coefficients at rho=0 are {lead:.3e}")
    if consistency > consistency_tol:
        raise BuildError(f"Cauchy coefficients disagree across radii by {consistency:.3e}")
    return H, rep


def _fd_gradient_coeffs(comp: ComposedHamiltonian, grid: CauchyGrid, keys, h, shape):
    """Cauchy coefficients of the pairing gradient in f of the Darboux correction."""
    if not keys:
        return {}
    z, w, rho, idx = grid.points()
    S = z.shape[0]
    D = int(np.prod(shape))
    gh = comp.m.grid.h
    E = np.eye(D).reshape((D,) + shape)
    pos = {t: i for i, t in enumerate(idx)}
    # evaluate one sample of each conjugate pair
    todo = [i for i, t in enumerate(idx) if pos[grid.mirror(t)] >= i]
    grads = np.zeros((S,) + shape, complex)
    for i in todo:
        zz = np.repeat(z[i:i + 1], 2 * D, 0)
        ww = np.repeat(w[i:i + 1], 2 * D, 0)
        rr = np.repeat(rho[i:i + 1], 2 * D, 0)
        ff = np.concatenate([h * E, -h * E])
        v = comp.value(zz, ww, ff, rr, part="C")
        grads[i] = ((v[:D] - v[D:]) / (2 * h * gh)).reshape(shape)
        j = pos[grid.mirror(idx[i])]
        if j != i:
            grads[j] = np.conj(grads[i])
    return grid.coefficients(grads, keys)


def _dense_K_hessians(comp: ComposedHamiltonian, keys, r, s, h, shape, space):
    """Dense f-Hessians of the K_ext part for keys of weight <= 4 (plus a marker check)."""
    nm, n0 = comp.nmodes, comp.n0
    D = int(np.prod(shape))
    E = np.eye(D).reshape((D,) + shape)
    out = {}
    gh = comp.m.grid.h

    def hess_on(grid, want):
        z, w, rho, _ = grid.points()
        S = z.shape[0]
        cols = np.zeros((S, D, D), complex)
        for i in range(S):
            zz = np.repeat(z[i:i + 1], 2 * D, 0)
            ww = np.repeat(w[i:i + 1], 2 * D, 0)
            rr = np.repeat(rho[i:i + 1], 2 * D, 0)
            g = comp.grad_K(zz, ww, np.concatenate([h * E, -h * E]), rr)
            cols[i] = ((g[:D] - g[D:]) / (2 * h)).reshape(D, D)  # row i_dir = A e_i
        co = grid.coefficients(cols, want)
        return {k: 0.5 * (A.T + A) for k, A in co.items()}

    zero = ((0,) * nm, (0,) * nm, (0,) * n0)
    zkeys = [k for k in keys if not any(k[2])] + [zero]
    gz = CauchyGrid(nm, n0, 4, r, 1, s, with_rho=False)
    res = hess_on(gz, zkeys) if nm else hess_on(gz, [zero])
    A0 = res.pop(zero)
    out.update(res)
    rkeys = [k for k in keys if any(k[2]) and not any(k[0]) and not any(k[1])]
    if rkeys:
        gr = CauchyGrid(0, n0, 1, 0.0, 3, s)
        out.update(hess_on(gr, rkeys))
    # the rho = 0, z = 0 block must be the marker J^-1 H on X_c
    Pc = space.frame.pc_matrix()
    Mk = np.stack([space.Jinv(space.H(E[i])).ravel() for i in range(D)])
    dev = np.max(np.abs(Pc.T @ (A0 - Mk) @ Pc)) / np.max(np.abs(Pc.T @ Mk @ Pc))
    return out, float(dev)


class _LazyCHessians:
    """Matrix-free f-Hessian blocks of the Darboux correction.

    A v for all requested keys at once: a central difference in the direction v
    of the finite-difference gradient, sampled on Cauchy circles.
    """

    def __init__(self, comp, keys, r, s, h, delta):
        self.comp, self.keys, self.h, self.delta = comp, keys, h, delta
        nm, n0 = comp.nmodes, comp.n0
        self.zkeys = [k for k in keys if not any(k[2])]
        self.rkeys = [k for k in keys if any(k[2]) and not any(k[0]) and not any(k[1])]
        self.gz = CauchyGrid(nm, n0, 4, r, 1, s, with_rho=False)
        self.gr = CauchyGrid(0, n0, 1, 0.0, 3, s)
        self._cache = {}

    def getter(self, key):
        def fn(v):
            return self.matvec_all(v)[key]
        return fn

    def _grad_at(self, grid, f_base):
        comp = self.comp
        z, w, rho, _ = grid.points()
        shape = comp.shape
        D = int(np.prod(shape))
        E = np.eye(D).reshape((D,) + shape)
        S = z.shape[0]
        out = np.zeros((S,) + shape, complex)
        h = self.h
        for i in range(S):
            zz = np.repeat(z[i:i + 1], 2 * D, 0)
            ww = np.repeat(w[i:i + 1], 2 * D, 0)
            rr = np.repeat(rho[i:i + 1], 2 * D, 0)
            ff = f_base[None] + np.concatenate([h * E, -h * E])
            val = comp.value(zz, ww, ff, rr, part="C")
            out[i] = ((val[:D] - val[D:]) / (2 * h * comp.m.grid.h)).reshape(shape)
        return out

    def matvec_all(self, v):
        key = np.asarray(v, complex).tobytes()
        if key in self._cache:
            return self._cache[key]
        d = self.delta
        res = {}
        for grid, keys in ((self.gz, self.zkeys), (self.gr, self.rkeys)):
            if not keys:
                continue
            gp = self._grad_at(grid, d * v)
            gm = self._grad_at(grid, -d * v)
            res.update(grid.coefficients((gp - gm) / (2 * d), keys))
        self._cache[key] = res
        return res
