"""Absorbed dose from a space-energy fluence.

The fluence is integrated along energy lines with a 1D rule, divided by the
local density and projected onto a purely spatial grid in one of three ways:
a P1 L2 projection (no sign guarantee), element averages, or a P1 projection
constrained to be nonnegative.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fespace import FeSpace, NodalField
from .materials import MaterialField
from .mesh import Mesh
from .solvers import BoundSet, LinearSolveReport, solve_linear, solve_vi

SPATIAL_DEGREE = 4


class Representation(str, enum.Enum):
    GALERKIN = "GalerkinNodal"
    ELEMENT = "ElementConstant"
    VI = "ViNodal"


@dataclass(frozen=True)
class EnergyQuadrature:
    nodes: np.ndarray
    weights: np.ndarray
    rule: str = "trapezoid"

    def __post_init__(self):
        if len(self.nodes) != len(self.weights) or len(self.nodes) < 2:
            raise ValueError("energy rule needs at least two nodes and matching weights")
        if np.any(self.weights <= 0):
            raise ValueError("energy quadrature weights must be positive")

    @classmethod
    def trapezoid(cls, nodes) -> "EnergyQuadrature":
        e = np.unique(np.asarray(nodes, dtype=float))
        if len(e) < 2:
            raise ValueError("trapezoid rule needs two distinct energies")
        h = np.diff(e)
        w = np.zeros_like(e)
        w[:-1] += h / 2
        w[1:] += h / 2
        return cls(e, w, "trapezoid")

    @classmethod
    def uniform(cls, e_min: float, e_max: float, n: int) -> "EnergyQuadrature":
        return cls.trapezoid(np.linspace(e_min, e_max, n + 1))

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "EnergyQuadrature":
        """Trapezoid rule whose nodes are the distinct vertex energies of ``mesh``."""
        return cls.trapezoid(mesh.vertices[:, -1])

    @property
    def interval(self):
        return float(self.nodes[0]), float(self.nodes[-1])


@dataclass
class DoseField:
    representation: Representation
    values: np.ndarray
    mesh: Mesh
    report: LinearSolveReport | None = None
    meta: dict = field(default_factory=dict)

    @property
    def points(self) -> np.ndarray:
        """Locations of the values: grid vertices, or cell centroids for element averages."""
        if self.representation == Representation.ELEMENT:
            return self.mesh.centroids()
        return self.mesh.vertices

    def min_max(self):
        return float(self.values.min()), float(self.values.max())

    def peak_location(self) -> np.ndarray:
        return self.points[int(np.argmax(self.values))]

    def evaluate(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cells, lam = self.mesh.locate(points, lowest_id=False)
        if self.representation == Representation.ELEMENT:
            return self.values[cells]
        return np.einsum("ni,ni->n", lam, self.values[self.mesh.cells[cells]])

    def to_csv(self, path):
        names = ["depth"] if self.mesh.dim == 1 else [f"x{k + 1}" for k in range(self.mesh.dim)]
        with open(path, "w") as fh:
            fh.write(f"# representation={self.representation.value}\n")
            fh.write(",".join(names + ["dose"]) + "\n")
            np.savetxt(fh, np.column_stack([self.points, self.values]), delimiter=",", fmt="%.17g")


def dose_integrand_samples(fluence: NodalField, materials: MaterialField, equad: EnergyQuadrature,
                           spatial_points) -> np.ndarray:
    """sum_q w_q S(x, xi_q) psi_h(x, xi_q) / rho(x) at each spatial point."""
    x = np.asarray(spatial_points, dtype=float)
    x = x.reshape(len(x), -1) if x.ndim > 1 else x[:, None]
    P, Q = len(x), len(equad.nodes)
    if P == 0:
        return np.zeros(0)
    xr = np.repeat(x, Q, axis=0)
    er = np.tile(equad.nodes, P)
    psi = fluence.evaluate(np.column_stack([xr, er])).reshape(P, Q)
    S = materials.stopping_power(xr, er).reshape(P, Q)
    return (S * psi) @ equad.weights / materials.density(x)


def _integrand_fn(fluence, materials, equad):
    return lambda pts: dose_integrand_samples(fluence, materials, equad, pts)


def mass_matrix(space: FeSpace):
    d = space.dim
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    local = space.volumes[:, None, None] * ref[None]
    rows, cols = space.global_sparsity()
    return sp.csr_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(space.n_nodes, space.n_nodes))


def _load(space: FeSpace, integrand, degree=SPATIAL_DEGREE):
    x, w, basis = space.cell_quadrature(degree)
    vals = np.asarray(integrand(x.reshape(-1, space.dim)), dtype=float).reshape(w.shape)
    rhs = np.zeros(space.n_nodes)
    np.add.at(rhs, space.cells, np.einsum("mq,mq,qi->mi", w, vals, basis))
    return rhs


def project_galerkin(space: FeSpace, integrand, degree=SPATIAL_DEGREE) -> DoseField:
    """L2 projection of ``integrand`` (a function of spatial points) onto P1."""
    d, rep = solve_linear(mass_matrix(space), _load(space, integrand, degree), rtol=1e-10)
    return DoseField(Representation.GALERKIN, d, space.mesh, rep)


def project_element_constant(mesh: Mesh, integrand, degree=SPATIAL_DEGREE) -> DoseField:
    space = FeSpace(mesh)
    x, w, _ = space.cell_quadrature(degree)
    vals = np.asarray(integrand(x.reshape(-1, space.dim)), dtype=float).reshape(w.shape)
    return DoseField(Representation.ELEMENT, (w * vals).sum(axis=1) / w.sum(axis=1), mesh)


def project_vi(space: FeSpace, integrand, degree=SPATIAL_DEGREE, tol=None) -> DoseField:
    """P1 projection constrained to nonnegative nodal values."""
    M = mass_matrix(space)
    b = _load(space, integrand, degree)
    if not np.any(b):
        return DoseField(Representation.VI, np.zeros(space.n_nodes), space.mesh,
                         LinearSolveReport("vi-active-set", 0.0))
    d, rep = solve_vi(M, b, BoundSet(0.0, np.inf), tol=tol)
    return DoseField(Representation.VI, d, space.mesh, rep)


def dose_galerkin(fluence, materials, equad, dose_space: FeSpace) -> DoseField:
    return project_galerkin(dose_space, _integrand_fn(fluence, materials, equad))


def dose_element_constant(fluence, materials, equad, spatial_mesh: Mesh) -> DoseField:
    return project_element_constant(spatial_mesh, _integrand_fn(fluence, materials, equad))


def dose_vi(fluence, materials, equad, dose_space: FeSpace) -> DoseField:
    return project_vi(dose_space, _integrand_fn(fluence, materials, equad))


def compute_dose(kind: str, fluence, materials, equad, mesh: Mesh) -> DoseField:
    kind = Representation(kind) if not isinstance(kind, Representation) else kind
    if kind == Representation.ELEMENT:
        return dose_element_constant(fluence, materials, equad, mesh)
    space = FeSpace(mesh)
    if kind == Representation.GALERKIN:
        return dose_galerkin(fluence, materials, equad, space)
    return dose_vi(fluence, materials, equad, space)
