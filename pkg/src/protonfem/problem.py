"""A transport problem bundled with its discretisation and solver choice."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .assembly import TransportCoefficients, assemble_system
from .fespace import FeSpace, NodalField
from .mesh import Mesh
from .solvers import BoundSet, LinearSolveReport, solve_supg, solve_vi

SOLVERS = ("supg", "vi")


@dataclass
class TransportProblem:
    mesh: Mesh
    coeffs: TransportCoefficients
    solver: str = "vi"
    exact: Callable | None = None
    vi_tol: float | None = None
    max_outer: int = 1000

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")

    @property
    def bounds(self) -> BoundSet:
        """[0, g_sup]; the upper bound is dropped when a source term is present."""
        upper = np.inf if self.coeffs.source is not None else self.coeffs.g_sup
        return BoundSet(0.0, upper)

    def solve(self, mesh: Mesh | None = None) -> tuple[NodalField, LinearSolveReport]:
        return solve_transport(FeSpace(mesh or self.mesh), self)


def solve_transport(space: FeSpace, problem: TransportProblem):
    A, rhs = assemble_system(space, problem.coeffs)
    if problem.solver == "supg":
        return solve_supg(A, rhs, space)
    x0, _ = solve_supg(A, rhs)
    return solve_vi(A, rhs, problem.bounds, space=space, x0=x0, tol=problem.vi_tol,
                    max_outer=problem.max_outer)
