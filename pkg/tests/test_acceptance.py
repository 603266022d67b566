"""Acceptance criteria 1-9 at desk scale.

Each test records one summary line (see conftest) and then asserts, so a
failing criterion shows both its numbers and the assertion.
"""
import json
from pathlib import Path
import time

import numpy as np
import pytest

from solitonnf import cli
from solitonnf.darboux import darboux_audit
from solitonnf.grid import Grid, inner_arr
from solitonnf.linearize import build_H, discrete_spectrum, kernel_residuals
from solitonnf.model import cubic_nls, potential_nls, random_field
from solitonnf.normalform import build_H1, normalize, solve_modified, solve_plain
from solitonnf.normalform.homological import frozen_quadratic, target_predicates
from solitonnf.normalform.poly import bracket_st
from solitonnf.soliton import (branch_derivative, continue_branch, ground_state_guess, residual_norm,
                               sech_guess, solve_soliton)

ROOT = Path(__file__).resolve().parents[1]


def _norm(grid, u):
    return float(np.sqrt(abs(inner_arr(grid, u, np.conj(u)))))


# ----------------------------------------------------------------------------
# 1. soliton identities


def test_c1_soliton_identities(criterion):
    t0 = time.perf_counter()
    m = cubic_nls(Grid(20.0, 256))
    pt = solve_soliton(m, sech_guess(m, 1.0), lam=[-1.0, 0.0])
    seconds = time.perf_counter() - t0
    exact = np.zeros_like(pt.Phi.values)
    exact[0] = 1.0 / np.cosh(m.grid.x)
    gap = _norm(m.grid, pt.Phi.values - exact)
    res = residual_norm(m, pt.Phi.values, pt.lam)
    ok = res <= 1e-10 and gap <= 1e-6 and seconds < 5.0
    criterion(1, ok, f"residual {res:.2e} (<=1e-10), sech gap {gap:.2e} (<=1e-6), {seconds:.2f}s (<5s)")
    assert ok


# ----------------------------------------------------------------------------
# 2. kernel structure


def _branch_generalized(m, pt, j, h=1e-3):
    lam = np.asarray(pt.lam, float)
    vals = [lam[j] - h, lam[j], lam[j] + h]
    br = continue_branch(m, pt, vals, param_index=j)
    dPhi, _ = branch_derivative(br, 1)
    op = build_H(m, br.points[1])
    v = m.apply_J(m.diamond(j, br.points[1].Phi.values))
    return _norm(m.grid, op.apply(dPhi.values) - v), op


def test_c2_kernel_structure(pot, cubic, criterion):
    worst_k, worst_g, worst_p = 0.0, 0.0, 0.0
    for p in (pot, cubic):
        m = p.model
        for j in range(m.n0):
            g, op = _branch_generalized(m, p.point, j)
            worst_g = max(worst_g, g)
            worst_k = max(worst_k, max(kernel_residuals(op)["kernel"]))
        P = p.frame.geometry.pairing_matrix()
        worst_p = max(worst_p, float(np.max(np.abs(P - np.eye(2 * m.n0)))))
    ok = worst_k <= 1e-8 and worst_g <= 1e-5 and worst_p <= 1e-6
    criterion(2, ok, f"|H J D Phi| {worst_k:.2e} (<=1e-8), branch FD {worst_g:.2e} (<=1e-5), "
                     f"pairing {worst_p:.2e} (<=1e-6)")
    assert ok


# ----------------------------------------------------------------------------
# 3. spectral frame


def test_c3_spectral_frame(pot, criterion):
    fr = pot.frame
    nm = fr.n_modes
    norm = iso = 0.0
    for j in range(nm):
        for k in range(nm):
            norm = max(norm, abs(fr.omega(fr.xi[j], np.conj(fr.xi[k])) + 1j * (j == k)))
            iso = max(iso, abs(fr.omega(fr.xi[j], fr.xi[k])))
    rng = np.random.default_rng(7)
    orth = 0.0
    for _ in range(50):
        f = fr.Pc(random_field(pot.model.grid, rng))
        for xi in fr.xi:
            orth = max(orth, abs(fr.omega(xi, f)), abs(fr.omega(np.conj(xi), f)))
    m = potential_nls(Grid(20.0, 128))
    U, w0 = ground_state_guess(m, 1e-2)
    scale = 1e-2 / np.max(np.abs(U))
    pt = solve_soliton(m, U * scale, p=[0.5 * inner_arr(m.grid, U, U) * scale ** 2],
                       lam_guess=[w0])
    e_small = float(discrete_spectrum(build_H(m, pt)).e[0])
    ok = norm <= 1e-8 and iso <= 1e-8 and orth <= 1e-8 and abs(e_small - 3.0) <= 0.15
    criterion(3, ok, f"normalization {norm:.2e}, isotropy {iso:.2e}, X_c orthogonality "
                     f"{orth:.2e} (<=1e-8); internal mode {e_small:.4f} at amplitude 1e-2 (3 +- 5%)")
    assert ok


# ----------------------------------------------------------------------------
# 4. modulation


def test_c4_modulation(pot, cubic, criterion):
    rt = pt = pp = ga = 0.0
    for p in (pot, cubic):
        rep = cli.modulation_report(p.chart, seed=0, eps=1e-2)
        rt = max(rt, rep["roundtrip_error"])
        pt = max(pt, rep["poisson_Pi_tau_deviation"])
        pp = max(pp, rep["poisson_Pi_p"])
        ga = max(ga, rep["gauge_deviation"])
    ok = rt <= 1e-10 and pt <= 1e-7 and pp <= 1e-7 and ga <= 1e-9
    criterion(4, ok, f"round trip {rt:.2e} (<=1e-10), {{Pi,tau}}+I {pt:.2e}, {{Pi,p}} {pp:.2e} "
                     f"(<=1e-7), gauge {ga:.2e} (<=1e-9)")
    assert ok


# ----------------------------------------------------------------------------
# 5. Darboux


def test_c5_darboux(pot, criterion):
    rep = darboux_audit(pot.chart, eps=1e-2, probes=20, times=(0.0, 0.25, 0.5, 0.75, 1.0))
    mo = rep["moser"]["max"]
    sy = rep["symplecticity"]
    sc = rep["frozen_scaling"]
    ok = (mo <= 1e-7 and sy["deviation"] is not None and sy["deviation"] <= 1e-5
          and sy["deviation"] < sy["control_deviation"] and abs(sc["slope"] - 3.0) <= 0.3)
    criterion(5, ok, f"Moser {mo:.2e} (<=1e-7, 20 probes x 5 times), form {sy['deviation']:.2e} "
                     f"(<=1e-5, control {sy['control_deviation']:.2e}), frozen slope "
                     f"{sc['slope']:.3f} (3 +- 0.3)")
    assert ok


# ----------------------------------------------------------------------------
# 6-7. homological solves and Birkhoff steps on the n=128 potential model


@pytest.fixture(scope="module")
def pot_H1(pot):
    return build_H1(pot.chart)[0]


def test_c6_homological(pot, pot_H1, criterion):
    fr = pot.frame
    H = pot_H1
    sp_, lp = target_predicates(1, fr.e, fr.edge)
    K = H.select(scal=sp_, lin=lp)
    chi = solve_plain(K, fr)
    R = (K + bracket_st(frozen_quadratic(H, fr.e), chi)).select(scal=sp_, lin=lp)
    res = max([abs(a) for a in R.scal.values()]
              + [float(np.max(np.abs(G))) for G in R.lin.values()])
    gf = solve_modified(H, 1, fr)
    orth = 0.0
    for B in list(chi.lin.values()) + list(gf.chi.lin.values()):
        for xi in fr.xi:
            orth = max(orth, abs(fr.omega(xi, B)), abs(fr.omega(np.conj(xi), B)))
    its = len(gf.iterations)
    ok = res <= 1e-8 and gf.residual <= 1e-8 and orth <= 1e-9 and its <= 5
    criterion(6, ok, f"per-monomial residual {res:.2e}, modified {gf.residual:.2e} (<=1e-8), "
                     f"B orthogonality {orth:.2e} (<=1e-9), l=1 iterations {its} (<=5)")
    assert ok


def test_c7_birkhoff(pot, pot_H1, criterion):
    res = normalize(pot_H1, pot.frame)
    rem = max(s.removable_max for s in res.steps)
    drift = max(s.diag_drift for s in res.steps)
    ok = rem <= 1e-8 and drift <= 1e-8 and [s.ell for s in res.steps] == [1, 2, 3]
    criterion(7, ok, f"steps {[s.ell for s in res.steps]}, removable {rem:.2e}, "
                     f"a_dd(0) drift {drift:.2e} (<=1e-8)")
    assert ok


# ----------------------------------------------------------------------------
# 8. truncation order


def test_c8_truncation_order(pot_cfg, criterion):
    t0 = time.perf_counter()
    rep = cli._tiny_oracle(pot_cfg)
    seconds = time.perf_counter() - t0
    thr = rep["cap"] + 1 - 0.3
    slopes = rep["slopes"]
    ok = min(slopes) >= thr and seconds <= 600 and rep["eps"] == [1e-2, 5e-3, 2.5e-3]
    criterion(8, ok, f"slopes {', '.join(f'{s:.3f}' for s in slopes)} (>={thr:.1f}), "
                     f"tiny-grid run {seconds:.1f}s (<=600s)")
    assert ok


# ----------------------------------------------------------------------------
# 9. determinism


@pytest.mark.slow
def test_c9_determinism(tmp_path, criterion):
    cfg = ROOT / "configs" / "potential.toml"
    times, codes = [], []
    for out in ("a", "b"):
        t0 = time.perf_counter()
        codes.append(cli.main(["normalform", str(cfg), "--output", str(tmp_path / out)]))
        times.append(time.perf_counter() - t0)
    da, db = tmp_path / "a" / "normalform", tmp_path / "b" / "normalform"
    names = sorted(p.name for p in da.iterdir() if p.name != "manifest.json")
    same = [n for n in names if (da / n).read_bytes() == (db / n).read_bytes()]
    ok = codes == [0, 0] and same == names and "effective_hamiltonian.bin" in names \
        and max(times) <= 300
    criterion(9, ok, f"{len(same)}/{len(names)} outputs byte-identical, exit codes {codes}, "
                     f"n=128 run {max(times):.0f}s (<=300s)")
    assert ok
