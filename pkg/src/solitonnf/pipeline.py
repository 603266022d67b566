"""Config-driven construction of the shared objects: model, soliton, family, frame, chart."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import time

import numpy as np

from .config import RunConfig
from .grid import Grid
from .linearize import Geometry, build_H, discrete_spectrum
from .model import cubic_nls, potential_nls
from .modulation import Chart
from .soliton import (SolitonFamily, ground_state_guess, sech_guess, solve_soliton)


def make_model(cfg: RunConfig, grid: Grid = None):
    mc = cfg.model
    grid = Grid(float(cfg.grid.L), int(cfg.grid.n)) if grid is None else grid
    if mc.kind == "potential":
        gens = tuple(mc.generators) if mc.generators else ("charge",)
        return potential_nls(grid, depth=int(mc.depth), g=float(mc.g), generators=gens)
    gens = tuple(mc.generators) if mc.generators else ("charge", "momentum")
    return cubic_nls(grid, g=float(mc.g), quintic=float(mc.quintic), generators=gens)


def initial_guess(cfg: RunConfig, m):
    """(field, lambda guess or None)."""
    s = cfg.soliton
    if cfg.model.kind == "potential":
        U, w0 = ground_state_guess(m, float(s.amplitude))
        return U, [w0] + [0.0] * (m.n0 - 1)
    omega = -float(s.lam[0]) if s.lam is not None else 1.0
    return sech_guess(m, omega if omega > 0 else 1.0), None


def solve_target(cfg: RunConfig, m):
    s = cfg.soliton
    U, lg = initial_guess(cfg, m)
    if s.p is not None:
        return solve_soliton(m, U, p=list(map(float, s.p)), lam_guess=lg, tol=float(s.tol))
    return solve_soliton(m, U, lam=list(map(float, s.lam)), tol=float(s.tol))


@dataclass
class Pipeline:
    """Lazy chain of the objects every command needs; records per-stage timings."""
    cfg: RunConfig
    grid: Grid = None

    def __post_init__(self):
        self.timings = {}

    def _timed(self, name, fn):
        t0 = time.perf_counter()
        out = fn()
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0
        return out

    @cached_property
    def model(self):
        return make_model(self.cfg, self.grid)

    @cached_property
    def point(self):
        return self._timed("soliton", lambda: solve_target(self.cfg, self.model))

    @cached_property
    def family(self):
        c = self.cfg.chart
        return self._timed("family", lambda: SolitonFamily(
            self.model, self.point, float(c.family_radius), degree=int(c.family_degree)))

    @cached_property
    def operator(self):
        return self._timed("operator", lambda: build_H(self.model, self.point))

    @cached_property
    def frame(self):
        return self._timed("spectrum", lambda: discrete_spectrum(
            self.operator, Geometry.from_family(self.family, self.point.p)))

    @cached_property
    def chart(self):
        return Chart(self.family, self.frame, radius_factor=float(self.cfg.chart.radius_factor))


def tiny_pipeline(cfg: RunConfig) -> Pipeline:
    """Same model on the small oracle grid."""
    nf = cfg.normalform
    return Pipeline(cfg, Grid(float(nf.oracle_L), int(nf.oracle_n)))


def random_state(chart: Chart, rng, eps: float):
    """Phi_p0 plus an eps-sized random perturbation in the range of P(p0)."""
    from .model import random_field
    m = chart.model
    X = chart.g0.P(random_field(m.grid, rng, m.ncomp))
    X = X / np.sqrt(np.sum(X * X) * m.grid.h)
    return chart.Phi0 + eps * X
