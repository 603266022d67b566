"""Coefficient tables (CSV) and the effective-Hamiltonian bundle (JSON + raw binary).

The bundle is ``stem.json`` plus ``stem.bin``.  Every field (an f-linear G or a
dense f^2 block) is stored in the .bin as little-endian float64 real and
imaginary planes, in row-major order, at the byte offset listed in the JSON.
Matrix-free blocks are described by label only.  Both files depend only on
the data, so identical inputs give identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..grid import GridFunction, sigma_norm
from .homological import classify
from .poly import DenseOp, LazyOp, MarkerOp, Poly, _sort_key, zdeg

SIGMA_ORDER = 1


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _mi(m) -> str:
    return ";".join(str(int(a)) for a in m)


def field_norm(space, G, k: int = SIGMA_ORDER) -> float:
    """Sigma_k norm of a complex field: sqrt(|Re G|^2 + |Im G|^2)."""
    g = space.grid
    re = sigma_norm(GridFunction(g, np.real(G)), k)
    im = sigma_norm(GridFunction(g, np.imag(G)), k)
    return float(np.hypot(re, im))


def coefficient_class(key, kind, frame, done_scalar: int, done_linear: int, tol=1e-9) -> str:
    """Z0, Z1, 'removed' (removable and already processed) or 'pending'."""
    c = classify(key, kind, frame.e, frame.edge, tol)
    if c != "removable":
        return c
    limit = done_scalar if kind == "scalar" else done_linear
    return "removed" if zdeg(key) <= limit else "pending"


def coefficient_rows(H: Poly, frame, step: int = None):
    """Table rows for H after Birkhoff step ``step`` (None: before any step)."""
    done_s = (step + 1) if step else 1
    done_l = step if step else 0
    rows = []
    for key in sorted(H.scal, key=_sort_key):
        a = H.scal[key]
        mu, nu, k = key
        cls = coefficient_class(key, "scalar", frame, done_s, done_l)
        rows.append([str(zdeg(key)), _mi(mu), _mi(nu), _mi(k), _fmt(a.real), _fmt(a.imag), "",
                     "scalar", cls])
    for key in sorted(H.lin, key=_sort_key):
        mu, nu, k = key
        cls = coefficient_class(key, "linear", frame, done_s, done_l)
        rows.append([str(zdeg(key)), _mi(mu), _mi(nu), _mi(k), "", "",
                     _fmt(field_norm(H.space, H.lin[key])), "linear", cls])
    return rows


CSV_HEADER = ["degree", "mu", "nu", "rho_order", "re_a", "im_a", "norm_G", "kind", "class"]


def write_coefficient_csv(path, H: Poly, frame, step: int = None) -> Path:
    path = Path(path)
    lines = [",".join(CSV_HEADER)]
    lines += [",".join(r) for r in coefficient_rows(H, frame, step)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_coefficient_csv(path):
    lines = Path(path).read_text().splitlines()
    head = lines[0].split(",")
    return [dict(zip(head, ln.split(","))) for ln in lines[1:]]


# ----------------------------------------------------------------------------
# bundle


def _key_json(key):
    mu, nu, k = key
    return {"mu": list(map(int, mu)), "nu": list(map(int, nu)), "k": list(map(int, k))}


class _Blob:
    def __init__(self):
        self.parts = []
        self.offset = 0

    def add(self, arr) -> dict:
        arr = np.asarray(arr, complex)
        data = np.ascontiguousarray(np.stack([arr.real, arr.imag]), dtype="<f8").tobytes()
        entry = {"offset": self.offset, "shape": list(arr.shape), "nbytes": len(data)}
        self.parts.append(data)
        self.offset += len(data)
        return entry

    def bytes(self) -> bytes:
        return b"".join(self.parts)


def _scal_list(items):
    return [dict(_key_json(k), re=float(a.real), im=float(a.imag)) for k, a in items]


def write_bundle(stem, H: Poly, frame, meta: dict = None):
    """Write the effective Hamiltonian as stem.json + stem.bin; returns both paths."""
    stem = Path(stem)
    e, edge = frame.e, frame.edge
    blob = _Blob()
    skeys = sorted(H.scal, key=_sort_key)
    psi = [(k, H.scal[k]) for k in skeys if zdeg(k) == 0]
    h2 = [(k, H.scal[k]) for k in skeys if zdeg(k) == 2 and classify(k, "scalar", e, edge) == "Z0"]
    z0 = [(k, H.scal[k]) for k in skeys if zdeg(k) > 2 and classify(k, "scalar", e, edge) == "Z0"]
    named = {k for k, _ in psi + h2 + z0}
    rest = [(k, H.scal[k]) for k in skeys if k not in named]
    lin = []
    for k in sorted(H.lin, key=_sort_key):
        ent = dict(_key_json(k), cls=classify(k, "linear", e, edge), G=blob.add(H.lin[k]))
        lin.append(ent)
    quad = []
    for k in sorted(H.quad, key=_sort_key):
        for c, op in H.quad[k]:
            ent = dict(_key_json(k), re=float(np.real(c)), im=float(np.imag(c)))
            if isinstance(op, MarkerOp):
                ent["op"] = {"type": "marker"}
            elif isinstance(op, DenseOp):
                ent["op"] = {"type": "dense", "label": op.label, "data": blob.add(op.matrix)}
            elif isinstance(op, LazyOp):
                ent["op"] = {"type": "matrix-free", "label": op.label}
            else:
                ent["op"] = {"type": type(op).__name__}
            quad.append(ent)
    grid = H.space.grid
    doc = {
        "format": "solitonnf-bundle/1",
        "grid": grid.to_dict(),
        "field_shape": list(H.space.shape),
        "nmodes": H.nmodes, "n0": H.n0, "cap": H.cap,
        "frequencies": [float(x) for x in e], "edge": float(edge),
        "psi": _scal_list(psi), "H2": _scal_list(h2), "Z0": _scal_list(z0),
        "other_scalars": _scal_list(rest),
        "linear": lin, "quadratic": quad,
        "dropped": [{"i": int(i), "j": int(j), "count": int(n)}
                    for (i, j), n in sorted(H.tags.items())],
        "binary": stem.with_suffix(".bin").name,
        "meta": meta or {},
    }
    jp, bp = stem.with_suffix(".json"), stem.with_suffix(".bin")
    bp.write_bytes(blob.bytes())
    jp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return jp, bp


def read_bundle(stem):
    """Load a bundle: (document, fields).

    fields["linear"] maps key -> G; fields["dense"] maps key -> list of f^2
    blocks, in file order (one monomial may carry several).
    """
    stem = Path(stem)
    doc = json.loads(stem.with_suffix(".json").read_text())
    raw = stem.with_suffix(".bin").read_bytes()

    def get(ent):
        a = np.frombuffer(raw, dtype="<f8", count=ent["nbytes"] // 8, offset=ent["offset"])
        a = a.reshape([2] + ent["shape"])
        return a[0] + 1j * a[1]

    def key(ent):
        return (tuple(ent["mu"]), tuple(ent["nu"]), tuple(ent["k"]))

    dense = {}
    for x in doc["quadratic"]:
        if x["op"]["type"] == "dense":
            dense.setdefault(key(x), []).append(get(x["op"]["data"]))
    return doc, {"linear": {key(x): get(x["G"]) for x in doc["linear"]}, "dense": dense}
