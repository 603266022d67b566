"""Independent check of the Lie-series pullback by direct flow integration.

With rho frozen, the time-one map of chi is integrated with a high order
Runge-Kutta method in complexified variables (z, w, f):

    z' = i d_w chi,   w' = -i d_z chi,   f' = P_c J grad_f chi.

H o phi is compared with lie_pullback(H, chi, transport=False) along a
scaling x = eps (zhat, fhat), rho = eps^2 rhohat.  Only terms beyond the
weight cap are missing from the series, so the gap in the f-jets of order 0
and 1 must shrink like eps^(cap+1).
"""
from __future__ import annotations

from dataclasses import dataclass
import time

import numpy as np
from scipy.integrate import solve_ivp

from .poly import LazyOp, Poly, _rho_power, _z_power, lie_pullback


def _unit(n, j):
    return tuple(1 if i == j else 0 for i in range(n))


def partials(P: Poly, z, w, f, rho):
    """(d_z P, d_w P, pairing gradient in f) for a polynomial without f-quadratic part."""
    if P.quad:
        raise ValueError("flow oracle needs a generating function without f^2 terms")
    sp = P.space
    nm = P.nmodes
    dz = np.zeros(nm, complex)
    dw = np.zeros(nm, complex)
    gf = np.zeros(sp.shape, complex)
    lin_vals = {key: sp.pair(sp.Jinv(G), f) for key, G in P.lin.items()}
    terms = [(key, a) for key, a in P.scal.items()] + [(key, lin_vals[key]) for key in P.lin]
    for (mu, nu, k), a in terms:
        r = _rho_power(rho, k)
        for j in range(nm):
            if mu[j]:
                mm = tuple(np.subtract(mu, _unit(nm, j)))
                dz[j] += a * mu[j] * _z_power(z, w, mm, nu) * r
            if nu[j]:
                nn = tuple(np.subtract(nu, _unit(nm, j)))
                dw[j] += a * nu[j] * _z_power(z, w, mu, nn) * r
    for (mu, nu, k), G in P.lin.items():
        gf = gf + _z_power(z, w, mu, nu) * _rho_power(rho, k) * sp.Jinv(G)
    return dz, dw, gf


def flow(chi: Poly, z, w, f, rho, t_final: float = 1.0, rtol: float = 1e-13,
         atol: float = 1e-16):
    """Time-t map of the frozen-rho Hamiltonian field of chi."""
    sp = chi.space
    nm = chi.nmodes
    shape = sp.shape

    def unpack(y):
        return y[:nm], y[nm:2 * nm], y[2 * nm:].reshape(shape)

    def rhs(t, y):
        zz, ww, ff = unpack(y)
        dz, dw, gf = partials(chi, zz, ww, ff, rho)
        fdot = sp.Pc(sp.J(gf))
        return np.concatenate([1j * dw, -1j * dz, fdot.ravel()])

    y0 = np.concatenate([np.atleast_1d(z), np.atleast_1d(w), np.asarray(f, complex).ravel()])
    sol = solve_ivp(rhs, (0.0, t_final), y0.astype(complex), method="DOP853", rtol=rtol,
                    atol=atol)
    if not sol.success:
        raise RuntimeError(f"flow integration failed: {sol.message}")
    return unpack(sol.y[:, -1])


def _jets(fn, M: int = 16, radius: float = 1.0):
    """Taylor coefficients 0 and 1 of s -> fn(s) from M points on |s| = radius."""
    s = radius * np.exp(2j * np.pi * np.arange(M) / M)
    v = np.array([fn(x) for x in s])
    c = np.fft.fft(v) / M
    return np.array([c[0], c[1] / radius])


@dataclass
class OracleResult:
    eps: list
    errors: list       # per eps: [jet0, jet1]
    slopes: list       # per jet order
    threshold: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(min(self.slopes) >= self.threshold)

    def to_dict(self):
        return {"eps": self.eps, "errors": self.errors, "slopes": self.slopes,
                "threshold": self.threshold, "passed": self.passed, "seconds": self.seconds}


def strip_lazy(H: Poly) -> Poly:
    """Copy of H without matrix-free f^2 blocks (they only cost time here)."""
    out = H.copy()
    out.quad = {k: [(c, o) for c, o in v if not isinstance(o, LazyOp)] for k, v in out.quad.items()}
    out.quad = {k: v for k, v in out.quad.items() if v}
    return out


def run_oracle(H: Poly, chi: Poly, eps=(0.1, 0.07, 0.05, 0.035, 0.025), seed: int = 0,
               M: int = 16, threshold: float = 5.7, rtol: float = 1e-13) -> OracleResult:
    t0 = time.time()
    sp = H.space
    rng = np.random.default_rng(seed)
    nm, n0 = H.nmodes, H.n0
    zhat = rng.normal(size=nm) + 1j * rng.normal(size=nm)
    zhat /= max(np.linalg.norm(zhat), 1e-300)
    fhat = sp.Pc(rng.normal(size=sp.shape))
    fhat = fhat / np.sqrt(sp.pair(fhat, fhat))
    rhat = np.abs(rng.normal(size=n0)) + 0.5
    series = lie_pullback(H, chi, transport=False)
    errors = []
    for ep in eps:
        z0, w0, rho = ep * zhat, ep * np.conj(zhat), ep ** 2 * rhat

        def exact(s):
            z, w, f = flow(chi, z0, w0, s * ep * fhat, rho, rtol=rtol)
            return H.evaluate(z, f, w=w, rho=rho)

        def approx(s):
            return series.evaluate(z0, s * ep * fhat, w=w0, rho=rho)

        d = _jets(exact, M) - _jets(approx, M)
        errors.append([float(abs(d[0])), float(abs(d[1]))])
    le = np.log(np.asarray(eps))
    E = np.log(np.maximum(np.asarray(errors), 1e-300))
    slopes = [float(np.polyfit(le, E[:, j], 1)[0]) for j in range(2)]
    return OracleResult([float(x) for x in eps], errors, slopes, threshold, time.time() - t0)
