"""Residual indicator, maximum marking and the solve-estimate-mark-refine loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import TransportCoefficients, cell_data, _check
from .analytic import error_norms
from .fespace import FeSpace, NodalField
from .mesh import refine
from .problem import TransportProblem, solve_transport

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IndicatorField:
    eta: np.ndarray

    def __post_init__(self):
        if np.any(self.eta < 0) or not np.all(np.isfinite(self.eta)):
            raise ValueError("indicators must be finite and nonnegative")

    @property
    def max(self) -> float:
        return float(self.eta.max()) if len(self.eta) else 0.0

    @property
    def total(self) -> float:
        """sqrt(sum eta_K^2)."""
        return float(np.sqrt((self.eta**2).sum()))


def _perp(omega):
    if len(omega) != 2:
        raise ValueError("the jump term needs two spatial dimensions")
    return np.array([-omega[1], omega[0]])


def estimate(space: FeSpace, coeffs: TransportCoefficients, psi_h) -> IndicatorField:
    """eta_K^2 = |L psi_h - f|^2_K + eps sum_{e in K, interior} h_e |[grad_x psi_h . omega_perp]|^2_e."""
    _check(space, coeffs)
    c = psi_h.coefficients if isinstance(psi_h, NodalField) else np.asarray(psi_h)
    cd = cell_data(space, coeffs)
    res = np.einsum("mqi,mi->mq", cd.Lphi, c[space.cells])
    if coeffs.source is not None:
        res = res - np.asarray(coeffs.source(cd.x.reshape(-1, space.dim))).reshape(res.shape)
    eta2 = (cd.w * res**2).sum(axis=1)
    if coeffs.epsilon > 0:
        mesh = space.mesh
        grad = np.einsum("mid,mi->md", space.grads, c[space.cells])[:, :-1]
        t = grad @ _perp(coeffs.omega)
        left, right = mesh.interior_cells[:, 0], mesh.interior_cells[:, 1]
        jump2 = (t[left] - t[right]) ** 2
        contrib = coeffs.epsilon * mesh.facet_diameters(mesh.interior_facets) \
            * mesh.facet_measures(mesh.interior_facets) * jump2
        np.add.at(eta2, left, contrib)
        np.add.at(eta2, right, contrib)
    return IndicatorField(np.sqrt(eta2))


def mark(indicator: IndicatorField, theta: float) -> np.ndarray:
    """Ids of the cells with eta_K >= theta * max eta."""
    if not 0 < theta <= 1:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    return np.flatnonzero(indicator.eta >= theta * indicator.max)


@dataclass
class LevelRecord:
    level: int
    dofs: int
    marked: int
    eta_sum: float
    energy_error: float | None = None
    l2_error: float | None = None
    solver_iterations: int = 0


@dataclass
class AdaptReport:
    records: list[LevelRecord] = field(default_factory=list)

    def append(self, rec: LevelRecord):
        if self.records:
            if rec.level <= self.records[-1].level:
                raise ValueError("levels must increase")
            if rec.dofs < self.records[-1].dofs:
                raise ValueError("dof count decreased")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def dofs(self):
        return [r.dofs for r in self.records]

    @property
    def energy_errors(self):
        return [r.energy_error for r in self.records]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "dofs", "marked", "eta_sum", "energy_error"])
            for r in self.records:
                err = "" if r.energy_error is None else f"{r.energy_error:.17g}"
                w.writerow([r.level, r.dofs, r.marked, f"{r.eta_sum:.17g}", err])


def adapt_loop(scenario, n_max: int, theta: float = 0.01):
    """Run up to ``n_max`` refinements; returns (final solution, report).

    ``scenario`` is a :class:`TransportProblem` or anything with a
    ``problem()`` method returning one.  The report has one row per solved
    mesh, so ``n_max = 0`` gives a single row for the initial mesh.
    """
    problem: TransportProblem = scenario if isinstance(scenario, TransportProblem) else scenario.problem()
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    mesh = problem.mesh
    report = AdaptReport()
    level = 0
    while True:
        space = FeSpace(mesh)
        psi, rep = solve_transport(space, problem)
        ind = estimate(space, problem.coeffs, psi)
        marked = mark(ind, theta) if level < n_max else np.zeros(0, dtype=int)
        rec = LevelRecord(level, space.n_nodes, len(marked), float((ind.eta**2).sum()),
                          solver_iterations=rep.iterations)
        if problem.exact is not None:
            rec.l2_error, rec.energy_error = error_norms(psi, problem.exact, problem.coeffs)
        report.append(rec)
        log.info("level %d: %d dofs, %d marked, eta^2 sum %.4e", level, rec.dofs, rec.marked, rec.eta_sum)
        if level >= n_max or len(marked) == 0:
            return psi, report
        mesh = refine(mesh, marked)
        level += 1
