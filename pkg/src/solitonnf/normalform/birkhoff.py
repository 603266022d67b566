"""Birkhoff iteration: steps ell = 1 .. 2N+1 on the expanded Hamiltonian."""
from __future__ import annotations

from dataclasses import dataclass, field
import time

import numpy as np

from .homological import (GeneratingFunction, ResonanceError, classify, poly_size,
                          solve_modified)
from .poly import Poly, lie_pullback, zdeg


class NormalFormError(RuntimeError):
    pass


@dataclass
class StepRecord:
    ell: int
    generator: GeneratingFunction
    removable_max: float
    diag_drift: float
    chi_size: float
    seconds: float
    H: Poly = None

    def to_dict(self):
        return {"ell": self.ell, "iterations": [float(x) for x in self.generator.iterations],
                "homological_residual": float(self.generator.residual),
                "removable_max": float(self.removable_max), "diag_drift": float(self.diag_drift),
                "chi_size": float(self.chi_size), "seconds": float(self.seconds)}


@dataclass
class NormalFormResult:
    H1: Poly
    H: Poly
    steps: list = field(default_factory=list)
    last_step: int = 0

    @property
    def generators(self):
        return [s.generator for s in self.steps]


def removable_max(H: Poly, e, edge, ell: int, tol: float = 1e-9) -> float:
    """Largest removable coefficient among scalars of degree <= ell+1 and f-linear of degree <= ell."""
    out = 0.0
    for key, a in H.scal.items():
        if zdeg(key) <= ell + 1 and classify(key, "scalar", e, edge, tol) == "removable":
            out = max(out, abs(a))
    for key, G in H.lin.items():
        if zdeg(key) <= ell and classify(key, "linear", e, edge, tol) == "removable":
            out = max(out, float(np.sqrt(abs(H.space.pair(G, np.conj(G))))))
    return out


def diag_values(H: Poly):
    z0 = (0,) * H.n0
    out = []
    for j in range(H.nmodes):
        dj = tuple(1 if i == j else 0 for i in range(H.nmodes))
        out.append(H.scal.get((dj, dj, z0), 0.0))
    return np.array(out, complex)


def normalize(H1: Poly, frame, max_degree: int = None, N: int = None, transport: bool = True,
              tol: float = 1e-8, solve_tol: float = 1e-10, resonance_tol: float = 1e-9,
              margin: float = 1e-6, log=None) -> NormalFormResult:
    """Run the Birkhoff steps.

    max_degree caps the scalar degree brought to normal form: step ell clears
    scalars of degree ell+1, so max_degree=2 runs only ell=1.
    """
    log = log or (lambda msg: None)
    last = 2 * (frame.N if N is None else int(N)) + 1
    if max_degree is not None:
        if max_degree < 2:
            raise ValueError("max_degree must be at least 2")
        last = min(last, max_degree - 1)
    res = NormalFormResult(H1=H1, H=H1, last_step=last)
    if H1.nmodes == 0:
        return res
    d0 = diag_values(H1)
    H = H1
    for ell in range(1, last + 1):
        t0 = time.time()
        gf = solve_modified(H, ell, frame, transport=transport, tol=solve_tol,
                            res_tol=resonance_tol, margin=margin)
        H = lie_pullback(H, gf.chi, transport=transport) if not gf.chi.is_empty() else H
        H.prune(0.0)
        rem = removable_max(H, frame.e, frame.edge, ell, resonance_tol)
        drift = float(np.max(np.abs(diag_values(H) - d0))) if len(d0) else 0.0
        rec = StepRecord(ell, gf, rem, drift, poly_size(gf.chi), time.time() - t0, H)
        res.steps.append(rec)
        log(f"step {ell}: chi {rec.chi_size:.3e}, iterations {len(gf.iterations)}, "
            f"removable {rem:.2e}, drift {drift:.2e}, {rec.seconds:.1f}s")
        if rem > tol:
            raise NormalFormError(f"step {ell}: removable content {rem:.3e} above {tol:.1e}")
        if drift > tol:
            raise NormalFormError(f"step {ell}: a_dd(0) drifted by {drift:.3e}")
    res.H = H
    return res


__all__ = ["NormalFormError", "NormalFormResult", "ResonanceError", "StepRecord", "normalize",
           "removable_max", "diag_values"]
