"""Continuous P1 Lagrange space, quadrature and nodal fields."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations

import numpy as np
from scipy.special import roots_jacobi

from .mesh import Mesh

MAX_DEGREE = 12


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference simplex.

    ``points`` are barycentric coordinates (Q, dim + 1); ``weights`` sum to
    the reference volume 1/dim!.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def dim(self) -> int:
        return self.points.shape[1] - 1

    def integrate_reference(self, f) -> float:
        """Integrate ``f(x)`` over the reference simplex; ``x`` is (Q, dim)."""
        return float(self.weights @ f(self.points[:, 1:]))


def _orbit(bary):
    return np.array(sorted(set(permutations(bary))))


def _gauss_jacobi01(m, alpha):
    """Nodes/weights on [0, 1] for the weight (1 - u)**alpha."""
    t, w = roots_jacobi(m, alpha, 0.0)
    return (1.0 + t) / 2.0, w / 2.0 ** (alpha + 1)


def _collapsed(dim, degree):
    m = max(1, math.ceil((degree + 1) / 2))
    if dim == 1:
        u, w = _gauss_jacobi01(m, 0.0)
        x = u[:, None]
        return x, w
    if dim == 2:
        u, wu = _gauss_jacobi01(m, 1.0)
        v, wv = _gauss_jacobi01(m, 0.0)
        U, V = np.meshgrid(u, v, indexing="ij")
        x = np.stack([U.ravel(), (V * (1 - U)).ravel()], axis=1)
        return x, np.outer(wu, wv).ravel()
    u, wu = _gauss_jacobi01(m, 2.0)
    v, wv = _gauss_jacobi01(m, 1.0)
    s, ws = _gauss_jacobi01(m, 0.0)
    U, V, S = np.meshgrid(u, v, s, indexing="ij")
    x = np.stack([U.ravel(), (V * (1 - U)).ravel(), (S * (1 - U) * (1 - V)).ravel()], axis=1)
    w = (wu[:, None, None] * wv[None, :, None] * ws[None, None, :]).ravel()
    return x, w


@lru_cache(maxsize=None)
def quadrature_for(degree: int, dim: int) -> QuadratureRule:
    """Positive-weight rule exact for polynomials of total degree ``degree``."""
    if dim not in (1, 2, 3):
        raise QuadratureError(f"unsupported simplex dimension {dim}")
    if not 0 <= degree <= MAX_DEGREE:
        raise QuadratureError(f"unsupported quadrature degree {degree} (max {MAX_DEGREE})")
    vol = 1.0 / math.factorial(dim)
    if degree <= 1:
        pts = np.full((1, dim + 1), 1.0 / (dim + 1))
        return QuadratureRule(pts, np.array([vol]), 1)
    if dim == 2 and degree == 2:
        pts = _orbit((2 / 3, 1 / 6, 1 / 6))
        return QuadratureRule(pts, np.full(3, vol / 3), 2)
    if dim == 3 and degree == 2:
        a, b = 0.5854101966249685, 0.1381966011250105
        pts = _orbit((a, b, b, b))
        return QuadratureRule(pts, np.full(4, vol / 4), 2)
    if dim == 2 and degree in (3, 4):
        # Dunavant 6-point rule, degree 4
        a, wa = 0.445948490915965, 0.223381589678011
        b, wb = 0.091576213509771, 0.109951743655322
        pa, pb = _orbit((a, a, 1 - 2 * a)), _orbit((b, b, 1 - 2 * b))
        pts = np.concatenate([pa, pb])
        w = np.concatenate([np.full(3, wa), np.full(3, wb)]) * vol
        return QuadratureRule(pts, w, 4)
    x, w = _collapsed(dim, degree)
    pts = np.concatenate([1.0 - x.sum(axis=1, keepdims=True), x], axis=1)
    return QuadratureRule(pts, w, degree)


class FeSpace:
    """P1 space: one node per mesh vertex, constant gradients per cell."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.dim = mesh.dim
        self.n_nodes = mesh.n_vertices
        self.cells = mesh.cells
        pts = mesh.vertices[mesh.cells]
        J = np.swapaxes(pts[:, 1:] - pts[:, :1], 1, 2)  # columns are edge vectors
        self.volumes = np.abs(np.linalg.det(J)) / math.factorial(self.dim)
        Jinv = np.linalg.inv(J)  # rows: gradients of lambda_1..lambda_d
        g = np.concatenate([-Jinv.sum(axis=1, keepdims=True), Jinv], axis=1)
        self.grads = g  # (M, d+1, d)
        self.diameters = mesh.diameters()

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def coordinates(self) -> np.ndarray:
        return self.mesh.vertices

    def cell_quadrature(self, degree: int):
        """Physical quadrature: points (M, Q, d), weights (M, Q), basis values (Q, d+1)."""
        rule = quadrature_for(degree, self.dim)
        verts = self.mesh.vertices[self.cells]
        x = np.einsum("qi,mid->mqd", rule.points, verts)
        w = rule.weights[None, :] * (math.factorial(self.dim) * self.volumes)[:, None]
        return x, w, rule.points

    def facet_quadrature(self, facets, degree: int):
        """Quadrature on facets (F, dim): points (F, Q, d), weights (F, Q), facet basis (Q, dim)."""
        facets = np.asarray(facets)
        fdim = self.dim - 1
        verts = self.mesh.vertices[facets]
        meas = self.mesh.facet_measures(facets)
        if fdim == 0:
            return verts, np.ones((len(facets), 1)), np.ones((1, 1))
        rule = quadrature_for(degree, fdim)
        x = np.einsum("qi,fid->fqd", rule.points, verts)
        w = rule.weights[None, :] * (math.factorial(fdim) * meas)[:, None]
        return x, w, rule.points

    def global_sparsity(self):
        rows = np.repeat(self.cells, self.dim + 1, axis=1)
        cols = np.tile(self.cells, (1, self.dim + 1))
        return rows, cols


class FieldError(ValueError):
    pass


class NodalField:
    """Coefficient vector of a P1 function, with provenance metadata."""

    def __init__(self, space: FeSpace, coefficients, **meta):
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (space.n_nodes,):
            raise FieldError(f"expected {space.n_nodes} coefficients, got {coefficients.shape}")
        self.space = space
        self.coefficients = coefficients
        self.meta = dict(meta)

    def values_in_cells(self, cell_ids, points):
        lam = self.space.mesh.barycentric(cell_ids, points)
        return np.einsum("ni,ni->n", lam, self.coefficients[self.space.cells[cell_ids]])

    def cell_gradients(self) -> np.ndarray:
        """(M, d) gradient on each cell."""
        return np.einsum("mid,mi->md", self.space.grads, self.coefficients[self.space.cells])

    def at_quadrature(self, basis):
        """Values at the reference points ``basis`` (Q, d+1) of every cell: (M, Q)."""
        return self.coefficients[self.space.cells] @ basis.T

    def evaluate(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cells, lam = self.space.mesh.locate(points, lowest_id=False)
        return np.einsum("ni,ni->n", lam, self.coefficients[self.space.cells[cells]])

    def min_max(self):
        return float(self.coefficients.min()), float(self.coefficients.max())

    def to_csv(self, path, header: str | None = None):
        data = np.column_stack([self.space.coordinates, self.coefficients])
        with open(path, "w") as fh:
            if header:
                fh.write(f"# {header}\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def interpolate(space: FeSpace, f, **meta) -> NodalField:
    """Nodal interpolant; ``f`` maps an (n, d) array of coordinates to n values."""
    x = space.coordinates
    vals = np.asarray(f(x), dtype=float).reshape(-1)
    if vals.shape != (space.n_nodes,):
        raise FieldError("interpolated function returned the wrong number of values")
    bad = np.flatnonzero(~np.isfinite(vals))
    if len(bad):
        i = int(bad[0])
        raise FieldError(f"non-finite value {vals[i]} at node {i} {tuple(x[i])}")
    return NodalField(space, vals, **meta)


def evaluate(field: NodalField, point):
    return field.evaluate(point)
