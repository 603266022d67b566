"""Batch front end.

    solitonnf <command> CONFIG [--output DIR] [--seed N] [--threads N] [--force] ...

Commands: soliton, spectrum, modulate, darboux-audit, normalform, report.
Exit codes: 0 ok, 1 numerical failure, 2 usage.  Each command writes into
OUTPUT/<command>/ and always leaves a manifest.json there (config hash,
versions, timings).  Apart from the manifest, outputs depend only on the
config and seed.
"""
from __future__ import annotations

import argparse
from contextlib import nullcontext
import hashlib
import json
import os
from pathlib import Path
import platform
import sys
import time
import traceback

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
COMMANDS = ("soliton", "spectrum", "modulate", "darboux-audit", "normalform", "report")
SCHEMA_DIR = Path(__file__).with_name("schemas")

# Test hook: called with the spectral frame before the spectrum checks.
FRAME_HOOK = None
# Nominal per-step shrink of the chart, for the reported validity radius.
RADIUS_SHRINK = 0.5


class UsageError(Exception):
    pass


class CheckFailure(Exception):
    """A numerical check failed; details go into error.json."""

    def __init__(self, msg, details=None):
        super().__init__(msg)
        self.details = details or {}


# ----------------------------------------------------------------------------
# output helpers


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    return x


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n")


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    import scipy
    return {"solitonnf": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


class Run:
    """Per-command output directory, timings and manifest."""

    def __init__(self, cfg: RunConfig, command: str, force: bool, argv):
        self.cfg = cfg
        self.command = command
        self.dir = cfg.out_dir / command
        self.timings = {}
        self.argv = list(argv)
        if (self.dir / "manifest.json").exists() and not force:
            raise UsageError(f"outputs already exist in {self.dir}; rerun with --force")
        self.dir.mkdir(parents=True, exist_ok=True)
        for old in self.dir.iterdir():
            if old.is_file():
                old.unlink()
        self.t0 = time.perf_counter()

    def path(self, name) -> Path:
        return self.dir / name

    def stage(self, name):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = run.timings.get(name, 0.0) + time.perf_counter() - self.t
                return False

        return _T()

    def manifest(self, status: str, extra_timings=None):
        outs = sorted(p for p in self.dir.iterdir() if p.is_file() and p.name != "manifest.json")
        tim = dict(self.timings)
        tim.update(extra_timings or {})
        tim["total"] = time.perf_counter() - self.t0
        write_json(self.path("manifest.json"), {
            "command": self.command, "status": status, "argv": self.argv,
            "config_hash": self.cfg.digest(), "config": self.cfg.to_dict(),
            "seed": self.cfg.seed, "versions": versions(),
            "timings": {k: round(v, 6) for k, v in sorted(tim.items())},
            "outputs": {p.name: _sha(p) for p in outs}})


# ----------------------------------------------------------------------------
# commands


def cmd_soliton(run: Run, pipe, args) -> str:
    from .soliton import SolitonBranch, check_nondegeneracy, continue_branch, residual_norm
    cfg = run.cfg
    m = pipe.model
    pt = pipe.point
    pt.Phi.save(run.path("phi"))
    pt.Phi.to_csv(run.path("phi.csv"))
    with run.stage("branch"):
        if cfg.soliton.branch:
            br = continue_branch(m, pt, [float(v) for v in cfg.soliton.branch], tol=cfg.soliton.tol)
        else:
            from .soliton import nondegeneracy_matrix
            br = SolitonBranch(m, [pt], 0, [nondegeneracy_matrix(m, pt)])
    br.to_csv(run.path("branch.csv"))
    for i, q in enumerate(br.points):
        q.Phi.save(run.path(f"branch_{i:03d}"))
    nd = check_nondegeneracy(br)
    from .linearize import Geometry
    pair_dev = float(np.max(np.abs(Geometry.from_point(m, pt).pairing_matrix()
                                   - np.eye(2 * m.n0))))
    report = {"model": m.describe(), "point": pt.to_dict(),
              "residual": residual_norm(m, pt.Phi.values, pt.lam),
              "nondegeneracy": nd, "pairing_deviation": pair_dev,
              "branch": br.table()}
    report["pass"] = bool(nd["pass"] and report["residual"] <= 1e-8 and pair_dev <= 1e-6)
    write_json(run.path("nondegeneracy.json"), report)
    if not report["pass"]:
        raise CheckFailure("soliton checks failed", report)
    return "ok"


def _edge_margins(frame):
    out = []
    for e, N in zip(frame.e, frame.N_j):
        out.append({"e": float(e), "N": int(N), "below": float(frame.edge - N * abs(e)),
                    "above": float((N + 1) * abs(e) - frame.edge)})
    return out


def spectrum_report(pipe, hook=None) -> dict:
    from .linearize import check_resonances, kernel_residuals
    from .soliton import lambda_derivatives
    m = pipe.model
    fr = pipe.frame
    if hook is not None:
        fr = hook(fr)
    kr = kernel_residuals(pipe.operator, lambda_derivatives(m, pipe.point))
    nm = fr.n_modes
    om = np.zeros((nm, nm, 2), complex)
    for j in range(nm):
        for k in range(nm):
            om[j, k, 0] = fr.omega(fr.xi[j], np.conj(fr.xi[k]))
            om[j, k, 1] = fr.omega(fr.xi[j], fr.xi[k])
    norm_dev = float(np.max(np.abs(om[..., 0] + 1j * np.eye(nm)))) if nm else 0.0
    iso_dev = float(np.max(np.abs(om[..., 1]))) if nm else 0.0
    res = check_resonances(fr, fr.N)
    rep = {"frame": fr.report(), "n_modes": nm, "weight_cap": fr.weight_cap,
           "resonance": res, "edge_margins": _edge_margins(fr),
           "kernel": kr, "normalization_deviation": norm_dev,
           "isotropy_deviation": iso_dev,
           "eigenvalues_imag": sorted(float(v) for v in np.abs(np.asarray(fr.e)))}
    rep["pass"] = bool(res["pass"] and norm_dev <= 1e-8 and iso_dev <= 1e-8
                       and max(kr["kernel"]) <= 1e-8)
    return rep


def validate_schema(doc, name):
    """Validate against a shipped schema; returns None when jsonschema is unavailable."""
    try:
        import jsonschema
    except ImportError:
        return None
    schema = json.loads((SCHEMA_DIR / name).read_text())
    jsonschema.validate(_jsonable(doc), schema)
    return True


def cmd_spectrum(run: Run, pipe, args) -> str:
    with run.stage("checks"):
        rep = spectrum_report(pipe, FRAME_HOOK)
    rep["schema_valid"] = validate_schema(rep, "spectrum.schema.json")
    write_json(run.path("spectrum.json"), rep)
    if not rep["pass"]:
        raise CheckFailure("spectral checks failed", {"resonance": rep["resonance"]})
    return "ok"


def modulation_report(chart, seed: int, eps: float) -> dict:
    from .modulation import coordinate_gradients, modulate, poisson, reconstruct_coords
    from .pipeline import random_state
    m = chart.model
    rng = np.random.default_rng(seed)
    U = random_state(chart, rng, eps)
    c = modulate(chart, U)
    U2 = reconstruct_coords(chart, c)
    rt = float(np.sqrt(np.sum((U2 - U) ** 2) * m.grid.h))
    gt, gp = coordinate_gradients(chart, c)
    n0 = m.n0
    gPi = np.stack([m.diamond(j, U) for j in range(n0)])
    pt = np.array([[poisson(chart, gPi[j], gt[k]) for k in range(n0)] for j in range(n0)])
    pp = np.array([[poisson(chart, gPi[j], gp[k]) for k in range(n0)] for j in range(n0)])
    sig = 0.37 * np.ones(n0)
    c2 = modulate(chart, m.group(sig, U))
    gauge = float(max(np.max(np.abs(c2.tau - c.tau - sig)), np.max(np.abs(c2.p - c.p)),
                      np.max(np.abs(c2.R - c.R))))
    rep = {"eps": eps, "coords": c.report(m.grid), "iterations": c.iterations,
           "roundtrip_error": rt,
           "poisson_Pi_tau_deviation": float(np.max(np.abs(pt + np.eye(n0)))),
           "poisson_Pi_p": float(np.max(np.abs(pp))),
           "gauge_deviation": gauge}
    rep["pass"] = bool(rt <= 1e-10 and rep["poisson_Pi_tau_deviation"] <= 1e-7
                       and rep["poisson_Pi_p"] <= 1e-7 and gauge <= 1e-9)
    return rep


def cmd_modulate(run: Run, pipe, args) -> str:
    with run.stage("modulation"):
        rep = modulation_report(pipe.chart, run.cfg.seed, float(run.cfg.chart.epsilon))
    write_json(run.path("modulation.json"), rep)
    if not rep["pass"]:
        raise CheckFailure("modulation checks failed", rep)
    return "ok"


def _tiny_oracle(cfg: RunConfig, log=None):
    from .normalform.birkhoff import normalize
    from .normalform.build import build_H1
    from .normalform.oracle import run_oracle, strip_lazy
    from .pipeline import tiny_pipeline
    tp = tiny_pipeline(cfg)
    ch = tp.chart
    if ch.frame.n_modes == 0:
        return {"skipped": "no discrete modes on the oracle grid", "passed": True}
    H, _ = build_H1(ch, rho_order=cfg.normalform.rho_order)
    H = strip_lazy(H)
    res = normalize(H, ch.frame, max_degree=3, transport=False)
    chi = res.steps[0].generator.chi
    for s in res.steps[1:]:
        chi = chi + s.generator.chi
    rep = run_oracle(H, chi, eps=tuple(cfg.normalform.oracle_eps), seed=cfg.seed,
                     threshold=H.cap + 1 - 0.3).to_dict()
    rep["grid"] = {"n": cfg.normalform.oracle_n, "L": cfg.normalform.oracle_L}
    rep["cap"] = H.cap
    return rep


def cmd_audit(run: Run, pipe, args) -> str:
    from .darboux import darboux_audit
    from .normalform.checks import jacobi_check
    from .normalform.poly import FSpace
    cfg = run.cfg
    a = cfg.audit
    with run.stage("darboux"):
        dar = darboux_audit(pipe.chart, eps=float(cfg.chart.epsilon), samples=a.samples,
                            probes=a.probes, seed=cfg.seed, moser_tol=a.moser_tol,
                            symplectic_tol=a.symplectic_tol)
    with run.stage("brackets"):
        jac = jacobi_check(FSpace(pipe.frame), seed=cfg.seed)
        jac["pass"] = bool(jac["defect"] <= 1e-9)
    out = {"darboux": dar, "brackets": jac}
    if cfg.normalform.oracle:
        with run.stage("oracle"):
            out["oracle"] = _tiny_oracle(cfg)
    out["pass"] = bool(dar["pass"] and jac["pass"] and out.get("oracle", {}).get("passed", True))
    write_json(run.path("audit.json"), out)
    return "ok" if out["pass"] else "fail"


def cmd_normalform(run: Run, pipe, args) -> str:
    from .normalform.birkhoff import normalize
    from .normalform.build import build_H1
    from .normalform.io import write_bundle, write_coefficient_csv
    cfg = run.cfg
    nf = cfg.normalform
    ch = pipe.chart
    fr = ch.frame
    N = fr.N if nf.N is None else int(nf.N)
    cap = 2 * N + 3 if nf.cap is None else int(nf.cap)
    with run.stage("build"):
        H1, brep = build_H1(ch, cap=cap, rho_order=nf.rho_order)
    write_coefficient_csv(run.path("coefficients_H1.csv"), H1, fr)
    with run.stage("birkhoff"):
        res = normalize(H1, fr, max_degree=nf.max_degree, N=N, transport=nf.transport,
                        tol=nf.removable_tol, solve_tol=nf.solve_tol,
                        resonance_tol=nf.resonance_tol)
    for rec in res.steps:
        write_coefficient_csv(run.path(f"coefficients_step{rec.ell}.csv"), rec.H, fr, step=rec.ell)
    H = res.H
    write_bundle(run.path("effective_hamiltonian"), H, fr,
                 meta={"config_hash": cfg.digest(), "steps": len(res.steps), "cap": cap})
    build = brep.to_dict()
    build.pop("seconds")
    build.pop("evaluations")
    report = {"build": build, "steps": [s.to_dict() for s in res.steps],
              "last_step": res.last_step, "N": N, "cap": cap,
              "chart_radius": float(ch.radius),
              "final_radius": float(ch.radius) * RADIUS_SHRINK ** len(res.steps),
              "dropped": [{"i": i, "j": j, "count": n} for (i, j), n in sorted(H.tags.items())]}
    for s in report["steps"]:
        s.pop("seconds")
    status = "ok"
    if nf.oracle:
        with run.stage("oracle"):
            orc = _tiny_oracle(cfg)
        orc.pop("seconds", None)
        write_json(run.path("oracle.json"), orc)
        report["oracle_passed"] = bool(orc.get("passed"))
        status = "ok" if report["oracle_passed"] else "fail"
    write_json(run.path("normalform.json"), report)
    return status


def cmd_report(run: Run, pipe, args) -> str:
    root = run.cfg.out_dir
    rows = []
    summary = {}
    for cmd in COMMANDS:
        if cmd == "report":
            continue
        mf = root / cmd / "manifest.json"
        if not mf.exists():
            rows.append([cmd, "missing", ""])
            continue
        man = json.loads(mf.read_text())
        summary[cmd] = {"status": man["status"], "config_hash": man["config_hash"],
                        "outputs": sorted(man["outputs"])}
        rows.append([cmd, man["status"], man["config_hash"][:12]])
    write_json(run.path("report.json"), {"commands": summary,
                                         "config_hash": run.cfg.digest()})
    lines = ["command,status,config_hash"] + [",".join(r) for r in rows]
    run.path("summary.csv").write_text("\n".join(lines) + "\n")
    return "ok"


HANDLERS = {"soliton": cmd_soliton, "spectrum": cmd_spectrum, "modulate": cmd_modulate,
            "darboux-audit": cmd_audit, "normalform": cmd_normalform, "report": cmd_report}


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="run configuration (TOML or JSON)")
    common.add_argument("--output", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="seed for random probes")
    common.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p = argparse.ArgumentParser(prog="solitonnf", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"solitonnf {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "darboux-audit":
            sp.add_argument("--samples", type=int, help="tangent samples for the form audit")
            sp.add_argument("--epsilon", type=float, help="chart scale |R| of the audit point")
        if name == "normalform":
            sp.add_argument("--max-degree", type=int, dest="max_degree",
                            help="highest scalar degree brought to normal form")
            sp.add_argument("--no-oracle", action="store_true", help="skip the tiny-grid oracle")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    from .config import validate
    if args.output:
        cfg.output = args.output
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "samples", None) is not None:
        cfg.audit.samples = args.samples
    if getattr(args, "epsilon", None) is not None:
        cfg.chart.epsilon = args.epsilon
    if getattr(args, "max_degree", None) is not None:
        cfg.normalform.max_degree = args.max_degree
    if getattr(args, "no_oracle", False):
        cfg.normalform.oracle = False
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be positive")
    return validate(cfg)


def _thread_limit(n):
    if n is None:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)
        return nullcontext()
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = _apply_overrides(load(args.config), args)
        run = Run(cfg, args.command, args.force, argv)
    except (ConfigError, UsageError) as exc:
        print(f"solitonnf: {exc}", file=sys.stderr)
        return EXIT_USAGE
    from .pipeline import Pipeline
    pipe = Pipeline(cfg)
    status = "error"
    try:
        with _thread_limit(args.threads):
            status = HANDLERS[args.command](run, pipe, args)
        code = EXIT_OK if status == "ok" else EXIT_NUMERIC
    except CheckFailure as exc:
        _error(run, exc, exc.details)
        status, code = "fail", EXIT_NUMERIC
    except ConfigError as exc:
        print(f"solitonnf: {exc}", file=sys.stderr)
        status, code = "usage", EXIT_USAGE
    except Exception as exc:  # numerical failures of any stage
        details = {}
        for attr in ("key", "kind", "denominator", "nearest", "best_residual", "exit_time"):
            if getattr(exc, attr, None) is not None:
                details[attr] = getattr(exc, attr)
        details["traceback"] = traceback.format_exc().splitlines()[-6:]
        _error(run, exc, details)
        status, code = "error", EXIT_NUMERIC
    run.manifest(status, {f"pipeline.{k}": v for k, v in pipe.timings.items()})
    return code


def _error(run: Run, exc, details):
    write_json(run.path("error.json"), {"error": type(exc).__name__, "message": str(exc),
                                        "details": details})
    print(f"solitonnf {run.command}: {type(exc).__name__}: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
