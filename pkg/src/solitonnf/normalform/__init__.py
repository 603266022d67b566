"""Graded polynomial algebra, expansion and Birkhoff normal form."""
from .birkhoff import NormalFormError, NormalFormResult, normalize, removable_max
from .build import BuildError, BuildReport, build_H1
from .homological import (GeneratingFunction, HomologicalError, ResonanceError, classify,
                          solve_modified, solve_plain)
from .oracle import OracleResult, run_oracle
from .poly import CapError, FSpace, Poly, bracket, bracket_st, lie_pullback

__all__ = [
    "BuildError", "BuildReport", "CapError", "FSpace", "GeneratingFunction", "HomologicalError",
    "NormalFormError", "NormalFormResult", "OracleResult", "Poly", "ResonanceError", "bracket",
    "bracket_st", "build_H1", "classify", "lie_pullback", "normalize", "removable_max",
    "run_oracle", "solve_modified", "solve_plain",
]
