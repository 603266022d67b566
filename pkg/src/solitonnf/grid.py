"""Periodic 1D grids, sampled fields and the basic bilinear forms.

Fields with 2N real components are stored as arrays of shape ``(2N, n)``.
Every kernel in this module also accepts leading batch axes and complex
dtypes, so that complex-step differentiation can be pushed through the
whole pipeline.  Inner products are bilinear (no conjugation).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GridError(ValueError):
    """Raised on shape or grid mismatches."""


@dataclass(frozen=True)
class Grid:
    half_width: float
    n_points: int
    x: np.ndarray = field(init=False, repr=False, compare=False)
    k: np.ndarray = field(init=False, repr=False, compare=False)
    k_odd: np.ndarray = field(init=False, repr=False, compare=False)
    kr: np.ndarray = field(init=False, repr=False, compare=False)
    kr_odd: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.n_points)
        if n < 8 or n % 2:
            raise GridError(f"n_points must be even and >= 8, got {self.n_points}")
        if not self.half_width > 0:
            raise GridError("half_width must be positive")
        L = float(self.half_width)
        x = -L + self.h * np.arange(n)
        k = np.fft.fftfreq(n, d=1.0 / n) * (np.pi / L)
        # the Nyquist mode has no antisymmetric derivative; drop it for odd orders
        k_odd = k.copy()
        k_odd[n // 2] = 0.0
        kr = np.arange(n // 2 + 1) * (np.pi / L)
        kr_odd = kr.copy()
        kr_odd[-1] = 0.0
        for name, val in (("x", x), ("k", k), ("k_odd", k_odd), ("kr", kr), ("kr_odd", kr_odd)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n_points

    @property
    def L(self) -> float:
        return self.half_width

    def same_as(self, other: "Grid") -> bool:
        return self.n_points == other.n_points and self.half_width == other.half_width

    def to_dict(self):
        return {"L": self.half_width, "n_points": self.n_points}


# ----------------------------------------------------------------------------
# array kernels


def inner_arr(grid: Grid, u, v):
    """Quadrature of sum_c int u_c v_c over the last two axes."""
    return grid.h * np.sum(u * v, axis=(-2, -1))


def _flat(a):
    return a.reshape(a.shape[:-2] + (a.shape[-2] * a.shape[-1],))


def gram_arr(grid: Grid, A, B):
    """Quadrature Gram matrix <A_m, B_k> of two field stacks (..., m, c, n), (..., k, c, n)."""
    return grid.h * (_flat(A) @ np.swapaxes(_flat(B), -1, -2))


def pair_arr(grid: Grid, A, x):
    """<A_m, x> for a stack (..., m, c, n) and a field (..., c, n)."""
    return grid.h * (_flat(A) @ _flat(x)[..., None])[..., 0]


def combine_arr(coef, A):
    """sum_m coef_m A_m for coef (..., m) and a stack (..., m, c, n)."""
    shp = A.shape[-2:]
    out = (coef[..., None, :] @ _flat(A))[..., 0, :]
    return out.reshape(out.shape[:-1] + shp)


def real_multiplier(grid: Grid, u, symbol_r):
    """Fourier multiplier that maps real fields to real fields.

    ``symbol_r`` lives on the half spectrum of ``rfft``.  Complex input is
    split into real and imaginary parts so that a tiny imaginary perturbation
    (complex-step differentiation) never picks up FFT roundoff from the real
    part.
    """
    if np.iscomplexobj(u):
        return real_multiplier(grid, u.real, symbol_r) + 1j * real_multiplier(grid, u.imag, symbol_r)
    return np.fft.irfft(symbol_r * np.fft.rfft(u, axis=-1), n=grid.n_points, axis=-1)


def dx_arr(grid: Grid, u, order: int = 1):
    """Spectral derivative along the last axis."""
    if order == 0:
        return u
    kk = grid.kr_odd if order % 2 else grid.kr
    return real_multiplier(grid, u, (1j * kk) ** order)


def fourier_multiplier(grid: Grid, u, symbol):
    """General multiplier on the full spectrum (symbol from ``grid.k``)."""
    out = np.fft.ifft(symbol * np.fft.fft(u, axis=-1), axis=-1)
    if np.isrealobj(u) and np.isrealobj(symbol):
        return out.real
    return out


def apply_matrix(M, u):
    """Apply a constant component matrix M (c x c) pointwise."""
    return np.matmul(M, u)


def symplectic_J(n_pairs: int) -> np.ndarray:
    """Block matrix [[0, I], [-I, 0]] on 2N components."""
    eye = np.eye(n_pairs)
    z = np.zeros((n_pairs, n_pairs))
    return np.block([[z, eye], [-eye, z]])


# ----------------------------------------------------------------------------
# GridFunction


@dataclass(frozen=True)
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim != 2 or vals.shape[1] != self.grid.n_points:
            raise GridError(
                f"values must have shape (2N, {self.grid.n_points}), got {vals.shape}")
        if vals.shape[0] % 2:
            raise GridError("component count must be even")
        if not np.all(np.isfinite(vals)):
            raise GridError("non-finite values in GridFunction")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def components(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, grid: Grid, components: int = 2):
        return cls(grid, np.zeros((components, grid.n_points)))

    @classmethod
    def from_callable(cls, grid: Grid, funcs):
        return cls(grid, np.array([f(grid.x) for f in funcs]))

    def _check(self, other: "GridFunction"):
        if not self.grid.same_as(other.grid) or self.components != other.components:
            raise GridError("grid or component mismatch")

    def __add__(self, other):
        self._check(other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, s):
        return GridFunction(self.grid, float(s) * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    # -- serialization -------------------------------------------------------
    def sidecar(self) -> dict:
        return {"n_points": self.grid.n_points, "L": self.grid.half_width,
                "components": self.components}

    def save(self, stem) -> tuple[Path, Path]:
        """Write ``stem.bin`` (little-endian f64, row-major) and ``stem.json``."""
        stem = Path(stem)
        b = stem.with_suffix(".bin")
        j = stem.with_suffix(".json")
        b.write_bytes(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        j.write_text(json.dumps(self.sidecar(), sort_keys=True) + "\n")
        return b, j

    @classmethod
    def load(cls, stem) -> "GridFunction":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
        grid = Grid(float(meta["L"]), int(meta["n_points"]))
        return cls(grid, raw.reshape(int(meta["components"]), grid.n_points))

    def to_csv(self, path):
        cols = ["x"] + [f"c{i}" for i in range(self.components)]
        data = np.column_stack([self.grid.x, self.values.T])
        lines = [",".join(cols)]
        lines += [",".join(repr(float(v)) for v in row) for row in data]
        Path(path).write_text("\n".join(lines) + "\n")


def _vals(u):
    return u.values if isinstance(u, GridFunction) else np.asarray(u)


def _pair(u, v):
    if isinstance(u, GridFunction) and isinstance(v, GridFunction):
        u._check(v)
        return u.grid
    raise GridError("expected GridFunction arguments")


def inner(u: GridFunction, v: GridFunction) -> float:
    """L2 pairing sum_c int u_c v_c dx."""
    grid = _pair(u, v)
    return float(inner_arr(grid, u.values, v.values))


def sigma_norm(u: GridFunction, k: int, k_max: int = 8) -> float:
    """Weighted Sobolev norm with the sawtooth coordinate as the weight."""
    if k < 0:
        raise GridError("negative orders are not supported; use duality quotients")
    if k > k_max:
        raise GridError(f"order {k} above k_max={k_max}")
    g = u.grid
    total = inner_arr(g, u.values, u.values)
    for a in range(1, k + 1):
        xa = g.x ** a * u.values
        da = dx_arr(g, u.values, a)
        total += inner_arr(g, xa, xa) + inner_arr(g, da, da)
    return float(np.sqrt(total))


def duality_quotient(u: GridFunction, probes, k: int) -> float:
    """Surrogate for a negative-order norm: max |<u,w>| / ||w||_{Sigma_k}."""
    best = 0.0
    for w in probes:
        nw = sigma_norm(w, k)
        if nw > 0:
            best = max(best, abs(inner(u, w)) / nw)
    return best


def omega_form(u: GridFunction, v: GridFunction, J) -> float:
    """Symplectic form <J^{-1} u, v>."""
    grid = _pair(u, v)
    J = np.asarray(J, dtype=float)
    if J.shape != (u.components, u.components):
        raise GridError("J has the wrong size")
    if abs(np.linalg.det(J)) < 1e-12:
        raise GridError("J is singular")
    return float(inner_arr(grid, apply_matrix(np.linalg.inv(J), u.values), v.values))
