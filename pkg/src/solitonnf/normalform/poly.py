"""Graded polynomials in (z, zbar, rho) with f-linear and f-quadratic parts.

A term is keyed by ``(mu, nu, k)`` with mu, nu multi-indices over the
discrete modes and k a multi-index over the momenta rho.  Three parts:

    scalar      a z^mu zbar^nu rho^k
    f-linear    z^mu zbar^nu rho^k <J^-1 G, f>          G in X_c
    f-quadratic z^mu zbar^nu rho^k 1/2 <f, A f>         A a symmetric operator

Grading: weight(z) = weight(f) = 1, weight(rho) = 2.  Anything pushed past
the weight cap, or to f-degree three, is dropped and counted in ``tags`` under
its (i, j) order, i = z-degree + rho-order and j = f-degree.
"""
from __future__ import annotations

from collections import Counter
import itertools

import numpy as np

from ..grid import inner_arr


class CapError(ValueError):
    pass


# ----------------------------------------------------------------------------
# multi-index helpers


def _add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def _unit(n, j):
    return tuple(1 if i == j else 0 for i in range(n))


def _sub(a, b):
    return tuple(x - y for x, y in zip(a, b))


def key_weight(key, fdeg: int) -> int:
    mu, nu, k = key
    return sum(mu) + sum(nu) + fdeg + 2 * sum(k)


def zdeg(key) -> int:
    return sum(key[0]) + sum(key[1])


def monomials(nmodes: int, degree: int):
    """All (mu, nu) with |mu| + |nu| = degree, in a fixed order."""
    out = []
    for a in range(degree + 1):
        for mu in _compositions(a, nmodes):
            for nu in _compositions(degree - a, nmodes):
                out.append((mu, nu))
    return out


def rho_orders(n0: int, order: int):
    return list(_compositions(order, n0))


def _compositions(total, parts):
    if parts == 0:
        if total == 0:
            yield ()
        return
    for head in range(total, -1, -1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


def _z_power(z, w, mu, nu):
    out = 1.0
    for j, (a, b) in enumerate(zip(mu, nu)):
        if a:
            out = out * z[..., j] ** a
        if b:
            out = out * w[..., j] ** b
    return out


def _rho_power(rho, k):
    out = 1.0
    for j, a in enumerate(k):
        if a:
            out = out * rho[..., j] ** a
    return out


# ----------------------------------------------------------------------------
# field side


class FSpace:
    """Field operations for the f-dependent parts: pairing, J, Diamond, P_c, H."""

    def __init__(self, frame):
        self.frame = frame
        self.model = frame.model
        self.grid = self.model.grid
        self.shape = (self.model.ncomp, self.grid.n_points)

    def pair(self, u, v):
        return inner_arr(self.grid, u, v)

    def J(self, u):
        return self.model.apply_J(u)

    def Jinv(self, u):
        return self.model.apply_Jinv(u)

    def diamond(self, j, u):
        return self.model.diamond(j, u)

    def Pc(self, u):
        return self.frame.Pc(u)

    def Pc_star(self, u):
        return self.frame.Pc_star(u)

    def H(self, u):
        return self.frame.op.apply(u)

    def to_G(self, v):
        """G in X_c with <J^-1 G, f> = <v, f> for all f in X_c."""
        return self.Pc(self.J(np.asarray(v, complex)))

    def momenta(self, f):
        return np.stack([0.5 * self.pair(self.diamond(j, f), f) for j in range(self.model.n0)],
                        axis=-1)


# ----------------------------------------------------------------------------
# f-quadratic operators: 1/2 <f, A f> with A symmetric for the quadrature pairing


class QuadOp:
    name = "op"

    def matvec(self, v):
        raise NotImplementedError

    def describe(self):
        return {"kind": self.name}


class MarkerOp(QuadOp):
    """A = J^-1 H, so that 1/2 <f, A f> = 1/2 Omega(H f, f)."""
    name = "marker"

    def __init__(self, space: FSpace):
        self.space = space

    def matvec(self, v):
        return self.space.Jinv(self.space.H(v))


class DenseOp(QuadOp):
    name = "dense"

    def __init__(self, matrix, shape, label=""):
        self.matrix = np.asarray(matrix)
        self.shape = tuple(shape)
        self.label = label

    def matvec(self, v):
        v = np.asarray(v)
        flat = v.reshape(v.shape[:-2] + (-1,))
        out = flat @ self.matrix.T
        return out.reshape(v.shape)

    def describe(self):
        return {"kind": self.name, "label": self.label, "dim": int(self.matrix.shape[0])}


class DyadOp(QuadOp):
    """A = u v^T + v u^T, i.e. 1/2 <f, A f> = <u, f><v, f>."""
    name = "dyad"

    def __init__(self, space: FSpace, u, v):
        self.space, self.u, self.v = space, np.asarray(u), np.asarray(v)

    def matvec(self, x):
        p = self.space.pair
        return (p(self.v, x)[..., None, None] * self.u + p(self.u, x)[..., None, None] * self.v)


class LazyOp(QuadOp):
    """Matrix-free operator with a memoized matvec."""
    name = "lazy"

    def __init__(self, fn, label=""):
        self.fn = fn
        self.label = label
        self._cache = {}

    def matvec(self, v):
        v = np.asarray(v, complex)
        key = v.tobytes()
        if key not in self._cache:
            self._cache[key] = self.fn(v)
        return self._cache[key]

    def describe(self):
        return {"kind": self.name, "label": self.label}


class TransportOp(QuadOp):
    """Operator of {1/2 <f, A f>, Pi_j(f)} on X_c: A P_c J D_j - D_j J P_c^* A."""
    name = "transport"

    def __init__(self, space: FSpace, A: QuadOp, j: int):
        self.space, self.A, self.j = space, A, j

    def matvec(self, x):
        s = self.space
        return (self.A.matvec(s.Pc(s.J(s.diamond(self.j, x))))
                - s.diamond(self.j, s.J(s.Pc_star(self.A.matvec(x)))))

    def describe(self):
        return {"kind": self.name, "of": self.A.describe(), "j": self.j}


class SumOp(QuadOp):
    name = "sum"

    def __init__(self, terms):
        self.terms = list(terms)

    def matvec(self, v):
        out = 0
        for c, op in self.terms:
            out = out + c * op.matvec(v)
        return out


# ----------------------------------------------------------------------------
# the polynomial


class Poly:
    """Sparse graded polynomial; see the module docstring for the layout."""

    def __init__(self, nmodes: int, n0: int, cap: int, space: FSpace = None):
        self.nmodes = int(nmodes)
        self.n0 = int(n0)
        self.cap = int(cap)
        self.space = space
        self.scal = {}
        self.lin = {}
        self.quad = {}
        self.tags = Counter()

    # -- construction ------------------------------------------------------------
    def empty_like(self) -> "Poly":
        return Poly(self.nmodes, self.n0, self.cap, self.space)

    def copy(self) -> "Poly":
        out = self.empty_like()
        out.scal = dict(self.scal)
        out.lin = {k: v.copy() for k, v in self.lin.items()}
        out.quad = {k: list(v) for k, v in self.quad.items()}
        out.tags = Counter(self.tags)
        return out

    def _check_key(self, key):
        mu, nu, k = key
        if len(mu) != self.nmodes or len(nu) != self.nmodes or len(k) != self.n0:
            raise ValueError(f"malformed key {key}")
        return (tuple(int(a) for a in mu), tuple(int(a) for a in nu), tuple(int(a) for a in k))

    def _fits(self, key, fdeg) -> bool:
        if fdeg >= 3 or key_weight(key, fdeg) > self.cap:
            self.tags[(zdeg(key) + sum(key[2]), fdeg)] += 1
            return False
        return True

    def add_scalar(self, key, a):
        key = self._check_key(key)
        if self._fits(key, 0):
            self.scal[key] = self.scal.get(key, 0.0) + complex(a)

    def add_linear(self, key, G):
        key = self._check_key(key)
        if self._fits(key, 1):
            G = np.asarray(G, complex)
            self.lin[key] = self.lin[key] + G if key in self.lin else G.copy()

    def add_quadratic(self, key, coef, op: QuadOp):
        key = self._check_key(key)
        if not self._fits(key, 2):
            return
        lst = self.quad.setdefault(key, [])
        for i, (c, o) in enumerate(lst):
            if o is op:
                lst[i] = (c + coef, o)
                return
        lst.append((complex(coef), op))

    def add_tag(self, key, fdeg, count=1):
        self.tags[(zdeg(key) + sum(key[2]), fdeg)] += count

    def iadd(self, other: "Poly", scale=1.0) -> "Poly":
        for k, a in other.scal.items():
            self.add_scalar(k, scale * a)
        for k, G in other.lin.items():
            self.add_linear(k, scale * G)
        for k, lst in other.quad.items():
            for c, op in lst:
                self.add_quadratic(k, scale * c, op)
        self.tags.update(other.tags)
        return self

    def __add__(self, other):
        return self.copy().iadd(other)

    def __sub__(self, other):
        return self.copy().iadd(other, -1.0)

    def scaled(self, s) -> "Poly":
        out = self.empty_like()
        out.iadd(self, s)
        out.tags = Counter(self.tags)
        return out

    # -- queries -------------------------------------------------------------------
    def is_empty(self) -> bool:
        return not (self.scal or self.lin or self.quad)

    def min_weight(self):
        ws = [key_weight(k, 0) for k in self.scal] + [key_weight(k, 1) for k in self.lin] \
            + [key_weight(k, 2) for k in self.quad]
        return min(ws) if ws else None

    def select(self, scal=None, lin=None, quad=None) -> "Poly":
        """Sub-polynomial of terms whose keys pass the given predicates (None drops the part)."""
        out = self.empty_like()
        if scal is not None:
            out.scal = {k: v for k, v in self.scal.items() if scal(k)}
        if lin is not None:
            out.lin = {k: v.copy() for k, v in self.lin.items() if lin(k)}
        if quad is not None:
            out.quad = {k: list(v) for k, v in self.quad.items() if quad(k)}
        return out

    def rho_derivative(self, j: int) -> "Poly":
        out = self.empty_like()
        e = _unit(self.n0, j)
        for (mu, nu, k), a in self.scal.items():
            if k[j]:
                out.scal[(mu, nu, _sub(k, e))] = k[j] * a
        for (mu, nu, k), G in self.lin.items():
            if k[j]:
                out.lin[(mu, nu, _sub(k, e))] = k[j] * G
        for (mu, nu, k), lst in self.quad.items():
            if k[j]:
                out.quad[(mu, nu, _sub(k, e))] = [(k[j] * c, op) for c, op in lst]
        return out

    def prune(self, tol=0.0) -> "Poly":
        """Drop exact zeros (tol = 0) or terms below tol."""
        self.scal = {k: v for k, v in self.scal.items() if abs(v) > tol}
        self.lin = {k: v for k, v in self.lin.items() if np.max(np.abs(v)) > tol}
        self.quad = {k: [(c, o) for c, o in v if abs(c) > tol] for k, v in self.quad.items()}
        self.quad = {k: v for k, v in self.quad.items() if v}
        return self

    def reality_defect(self) -> float:
        """max |a_{mu nu} - conj a_{nu mu}| over scalar and f-linear parts."""
        worst = 0.0
        for (mu, nu, k), a in self.scal.items():
            b = self.scal.get((nu, mu, k), 0.0)
            worst = max(worst, abs(a - np.conj(b)))
        for (mu, nu, k), G in self.lin.items():
            H = self.lin.get((nu, mu, k))
            H = np.zeros_like(G) if H is None else H
            worst = max(worst, float(np.max(np.abs(G - np.conj(H)))))
        return worst

    def symmetrize(self) -> "Poly":
        """Average each coefficient with the conjugate of its mirror."""
        scal, lin = {}, {}
        for (mu, nu, k), a in self.scal.items():
            scal[(mu, nu, k)] = 0.5 * (a + np.conj(self.scal.get((nu, mu, k), 0.0)))
        for (mu, nu, k), G in self.lin.items():
            H = self.lin.get((nu, mu, k))
            lin[(mu, nu, k)] = G if H is None else 0.5 * (G + np.conj(H))
        self.scal, self.lin = scal, lin
        return self

    # -- evaluation --------------------------------------------------------------------
    def evaluate(self, z, f=None, w=None, rho=None):
        """Value at (z, zbar = w, f) with rho = Pi(f) unless given; batch axes allowed."""
        z = np.asarray(z, complex)
        w = np.conj(z) if w is None else np.asarray(w, complex)
        if f is None:
            f = np.zeros(self.space.shape) if self.space is not None else None
        if rho is None:
            rho = self.space.momenta(f) if self.space is not None else np.zeros(self.n0)
        rho = np.asarray(rho)
        out = 0.0
        for (mu, nu, k), a in self.scal.items():
            out = out + a * _z_power(z, w, mu, nu) * _rho_power(rho, k)
        if self.lin or self.quad:
            sp = self.space
            for (mu, nu, k), G in self.lin.items():
                out = out + (_z_power(z, w, mu, nu) * _rho_power(rho, k)
                             * sp.pair(sp.Jinv(G), f))
            for (mu, nu, k), lst in self.quad.items():
                Af = sum(c * op.matvec(f) for c, op in lst)
                out = out + _z_power(z, w, mu, nu) * _rho_power(rho, k) * 0.5 * sp.pair(f, Af)
        return out

    def table(self):
        """Rows (key, kind, value) in a fixed order."""
        rows = []
        for k in sorted(self.scal, key=_sort_key):
            rows.append((k, "scalar", self.scal[k]))
        for k in sorted(self.lin, key=_sort_key):
            rows.append((k, "linear", self.lin[k]))
        return rows


def _sort_key(key):
    mu, nu, k = key
    return (sum(mu) + sum(nu), sum(k), mu, nu, k)


# ----------------------------------------------------------------------------
# products and brackets


def multiply(F: Poly, G: Poly) -> Poly:
    """Pointwise product; f-degree three and beyond is dropped with a tag."""
    out = F.empty_like()
    sp = F.space
    for (kf, a), (kg, b) in itertools.product(F.scal.items(), G.scal.items()):
        out.add_scalar(_key_sum(kf, kg), a * b)
    for (kf, a), (kg, B) in itertools.product(F.scal.items(), G.lin.items()):
        out.add_linear(_key_sum(kf, kg), a * B)
    for (kf, A), (kg, b) in itertools.product(F.lin.items(), G.scal.items()):
        out.add_linear(_key_sum(kf, kg), b * A)
    for (kf, a), (kg, lst) in itertools.product(F.scal.items(), G.quad.items()):
        for c, op in lst:
            out.add_quadratic(_key_sum(kf, kg), a * c, op)
    for (kf, lst), (kg, b) in itertools.product(F.quad.items(), G.scal.items()):
        for c, op in lst:
            out.add_quadratic(_key_sum(kf, kg), b * c, op)
    for (kf, A), (kg, B) in itertools.product(F.lin.items(), G.lin.items()):
        key = _key_sum(kf, kg)
        if out._fits(key, 2):
            out.add_quadratic(key, 1.0, DyadOp(sp, sp.Jinv(A), sp.Jinv(B)))
    for (kf, A), (kg, lst) in itertools.product(F.lin.items(), G.quad.items()):
        out.add_tag(_key_sum(kf, kg), 3)
    for (kf, lst), (kg, B) in itertools.product(F.quad.items(), G.lin.items()):
        out.add_tag(_key_sum(kf, kg), 3)
    for (kf, _), (kg, _) in itertools.product(F.quad.items(), G.quad.items()):
        out.add_tag(_key_sum(kf, kg), 4)
    return out


def _key_sum(a, b):
    return (_add(a[0], b[0]), _add(a[1], b[1]), _add(a[2], b[2]))


def bracket_st(F: Poly, G: Poly) -> Poly:
    """{F, G} with rho frozen: i sum_j (dz F dzb G - dzb F dz G) + <grad_f F, J grad_f G>."""
    out = F.empty_like()
    sp = F.space
    n = F.nmodes
    parts_F = (("s", F.scal), ("l", F.lin), ("q", F.quad))
    parts_G = (("s", G.scal), ("l", G.lin), ("q", G.quad))
    fdeg = {"s": 0, "l": 1, "q": 2}
    # z part
    for (tf, PF), (tg, PG) in itertools.product(parts_F, parts_G):
        for (kf, vf), (kg, vg) in itertools.product(PF.items(), PG.items()):
            muf, nuf, rf = kf
            mug, nug, rg = kg
            for j in range(n):
                c = 1j * (muf[j] * nug[j] - nuf[j] * mug[j])
                if c == 0:
                    continue
                e = _unit(n, j)
                key = (_sub(_add(muf, mug), e), _sub(_add(nuf, nug), e), _add(rf, rg))
                d = fdeg[tf] + fdeg[tg]
                if d >= 3:
                    out.add_tag(key, d)
                    continue
                _emit_product(out, sp, key, c, tf, vf, tg, vg)
    # f part
    for (kf, A), (kg, B) in itertools.product(F.lin.items(), G.lin.items()):
        out.add_scalar(_key_sum(kf, kg), sp.pair(sp.Jinv(A), B))
    for (kf, lst), (kg, B) in itertools.product(F.quad.items(), G.lin.items()):
        key = _key_sum(kf, kg)
        if out._fits(key, 1):
            v = sum(c * op.matvec(B) for c, op in lst)
            out.add_linear(key, sp.to_G(v))
    for (kf, A), (kg, lst) in itertools.product(F.lin.items(), G.quad.items()):
        key = _key_sum(kf, kg)
        if out._fits(key, 1):
            v = sum(c * op.matvec(A) for c, op in lst)
            out.add_linear(key, sp.to_G(-v))
    for (kf, _), (kg, _) in itertools.product(F.quad.items(), G.quad.items()):
        out.add_tag(_key_sum(kf, kg), 2)
    return out


def _emit_product(out, sp, key, c, tf, vf, tg, vg):
    if tf == "s" and tg == "s":
        out.add_scalar(key, c * vf * vg)
    elif tf == "s" and tg == "l":
        out.add_linear(key, c * vf * vg)
    elif tf == "l" and tg == "s":
        out.add_linear(key, c * vg * vf)
    elif tf == "s" and tg == "q":
        for cc, op in vg:
            out.add_quadratic(key, c * vf * cc, op)
    elif tf == "q" and tg == "s":
        for cc, op in vf:
            out.add_quadratic(key, c * vg * cc, op)
    else:  # l, l
        if out._fits(key, 2):
            out.add_quadratic(key, c, DyadOp(sp, sp.Jinv(vf), sp.Jinv(vg)))


def momentum_bracket(G: Poly, j: int) -> Poly:
    """{Pi_j(f), G} with rho frozen."""
    out = G.empty_like()
    sp = G.space
    for k, B in G.lin.items():
        out.add_linear(k, sp.to_G(sp.diamond(j, B)))
    for k, lst in G.quad.items():
        for c, op in lst:
            out.add_quadratic(k, -c, TransportOp(sp, op, j))
    return out


def bracket(F: Poly, G: Poly, transport: bool = True) -> Poly:
    """Full bracket with rho = Pi(f): frozen part plus the first order transport terms

        sum_j d_rho_j F {Pi_j, G} + d_rho_j G {F, Pi_j}.

    The second order term d_rho F d_rho G {Pi_i, Pi_j} is f-quadratic and is
    dropped with a tag.
    """
    out = bracket_st(F, G)
    if not transport:
        return out
    for j in range(F.n0):
        dF = F.rho_derivative(j)
        dG = G.rho_derivative(j)
        if not dF.is_empty():
            out.iadd(multiply(dF, momentum_bracket(G, j)))
        if not dG.is_empty():
            out.iadd(multiply(dG, momentum_bracket(F, j)), -1.0)
        for i in range(F.n0):
            dGi = G.rho_derivative(i)
            for (kf, _), (kg, _) in itertools.product(dF.scal.items(), dGi.scal.items()):
                out.add_tag(_key_sum(kf, kg), 2)
    return out


# ----------------------------------------------------------------------------
# Lie series


def lie_pullback(H: Poly, chi: Poly, cap: int = None, transport: bool = True,
                 max_terms: int = 64) -> Poly:
    """H o phi_chi = sum_k ad_chi^k H / k!, ad_chi H = {H, chi}, truncated at the cap."""
    w = chi.min_weight()
    if w is None:
        return H.copy()
    if w <= 2:
        raise CapError(f"generating function of weight {w} breaks the grading (needs >= 3)")
    if cap is not None and cap != H.cap:
        H = H.copy()
        H.cap = cap
    out = H.copy()
    term = H
    for k in range(1, max_terms + 1):
        term = bracket(term, chi, transport).scaled(1.0 / k)
        out.tags.update(term.tags)
        term.tags = Counter()
        if term.is_empty():
            break
        out.iadd(term)
    return out
