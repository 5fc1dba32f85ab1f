"""Assembly of the stabilised transport system and its norms.

For P1 trial/test functions the discrete operator is

    a(u, v) = eps (P grad_x u, P grad_x v)
            + (L u, v) - 1/2 <w u, v>_{inflow}
            + sum_K delta_K (L u, L v)_K

with ``L u = omega . grad_x u - d/dE (S u)``, ``P = I - omega omega^T`` and
boundary weight ``w = omega . n_x - S n_E``.  Everything is integrated with
the same quadrature so that discrete identities hold up to round-off.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fespace import FeSpace, NodalField
from .materials import MaterialField
from .mesh import FacetTag

VOLUME_DEGREE = 4
FACET_DEGREE = 4


class ConfigurationError(ValueError):
    pass


@dataclass
class TransportCoefficients:
    """Physical data of one transport problem.

    ``inflow`` and ``source`` map an (n, d_tot) array of space-energy points
    to n values; ``None`` means zero.
    """

    omega: np.ndarray
    materials: MaterialField
    epsilon: float = 0.0
    inflow: Callable | None = None
    source: Callable | None = None
    g_sup: float = 0.0
    mu_override: float | None = field(default=None, repr=False)

    def __post_init__(self):
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be non-negative")
        if self.g_sup < 0:
            raise ConfigurationError("g_sup must be non-negative")

    def mu(self, e_min: float) -> float:
        if self.mu_override is not None:
            return float(self.mu_override)
        return self.materials.mu(e_min)

    @property
    def has_source(self) -> bool:
        return self.source is not None


def _check(space: FeSpace, coeffs: TransportCoefficients):
    sd = space.dim - 1
    if len(coeffs.omega) != sd:
        raise ConfigurationError("omega dimension does not match the mesh")
    if coeffs.epsilon > 0 and sd == 1:
        raise ConfigurationError("angular diffusion needs two spatial dimensions (epsilon > 0 with spatial_dim = 1)")
    if space.mesh.facet_tags is None:
        raise ConfigurationError("transport assembly needs a space-energy mesh with tagged facets")


def _projector(omega):
    return np.eye(len(omega)) - np.outer(omega, omega)


def stopping_at(coeffs: TransportCoefficients, pts):
    """S and dS/dE at space-energy points of any leading shape."""
    shape = pts.shape[:-1]
    flat = pts.reshape(-1, pts.shape[-1])
    x, E = flat[:, :-1], flat[:, -1]
    S = coeffs.materials.stopping_power(x, E).reshape(shape)
    dS = coeffs.materials.stopping_power_derivative(x, E).reshape(shape)
    return S, dS


def stabilisation(space: FeSpace, coeffs: TransportCoefficients, degree: int = VOLUME_DEGREE):
    """delta_K = h_K / (2 (|omega| + |cell mean of S|))."""
    x, w, _ = space.cell_quadrature(degree)
    S, _ = stopping_at(coeffs, x)
    mean_S = (w * S).sum(axis=1) / w.sum(axis=1)
    return space.diameters / (2.0 * (np.linalg.norm(coeffs.omega) + np.abs(mean_S)))


@dataclass
class CellData:
    x: np.ndarray       # (M, Q, d) quadrature points
    w: np.ndarray       # (M, Q) weights
    basis: np.ndarray   # (Q, d+1) basis values
    S: np.ndarray
    dS: np.ndarray
    delta: np.ndarray   # (M,)
    Lphi: np.ndarray    # (M, Q, d+1) transport operator applied to each basis function


def cell_data(space: FeSpace, coeffs: TransportCoefficients, degree: int = VOLUME_DEGREE) -> CellData:
    x, w, basis = space.cell_quadrature(degree)
    S, dS = stopping_at(coeffs, x)
    mean_S = (w * S).sum(axis=1) / w.sum(axis=1)
    delta = space.diameters / (2.0 * (np.linalg.norm(coeffs.omega) + np.abs(mean_S)))
    g = space.grads
    adv = g[:, :, :-1] @ coeffs.omega  # (M, d+1)
    gE = g[:, :, -1]
    Lphi = adv[:, None, :] - dS[:, :, None] * basis[None, :, :] - S[:, :, None] * gE[:, None, :]
    return CellData(x, w, basis, S, dS, delta, Lphi)


def transport_residual_operator(space: FeSpace, coeffs: TransportCoefficients, degree: int = VOLUME_DEGREE):
    """Return ``apply(u)`` giving L(u_h) at every cell quadrature point, plus the cell data."""
    cd = cell_data(space, coeffs, degree)

    def apply(u) -> np.ndarray:
        c = u.coefficients if isinstance(u, NodalField) else np.asarray(u)
        return np.einsum("mqi,mi->mq", cd.Lphi, c[space.cells])

    apply.data = cd
    return apply


def _boundary(space: FeSpace, tag: FacetTag):
    mesh = space.mesh
    sel = np.flatnonzero(mesh.facet_tags == tag)
    return mesh.boundary_facets[sel], mesh.boundary_normals[sel], mesh.boundary_cells[sel]


def boundary_weight(coeffs: TransportCoefficients, pts, normals):
    """w = omega . n_x - S(E) n_E at facet points (F, Q, d)."""
    S, _ = stopping_at(coeffs, pts)
    wn = normals[:, :-1] @ coeffs.omega
    return wn[:, None] - S * normals[:, -1][:, None]


def assemble_system(space: FeSpace, coeffs: TransportCoefficients, *, degree: int = VOLUME_DEGREE,
                    facet_degree: int = FACET_DEGREE, diffusion: bool = True, transport: bool = True,
                    boundary: bool = True, supg: bool = True):
    """Assemble the sparse operator and load vector.

    The keyword switches drop individual contributions (used to inspect the
    pieces separately).  For a nonzero source the SUPG term ``delta_K (f, L v)``
    is added to the load to keep the scheme consistent.
    """
    _check(space, coeffs)
    cd = cell_data(space, coeffs, degree)
    n, d1 = space.n_nodes, space.dim + 1
    local = np.zeros((space.n_cells, d1, d1))
    if transport:
        local += np.einsum("mq,qi,mqj->mij", cd.w, cd.basis, cd.Lphi)
    if supg:
        local += cd.delta[:, None, None] * np.einsum("mq,mqi,mqj->mij", cd.w, cd.Lphi, cd.Lphi)
    if diffusion and coeffs.epsilon > 0:
        Pg = space.grads[:, :, :-1] @ _projector(coeffs.omega)
        local += coeffs.epsilon * space.volumes[:, None, None] * np.einsum("mid,mjd->mij", Pg, Pg)
    rows, cols = space.global_sparsity()
    A = sp.coo_matrix((local.reshape(space.n_cells, -1).ravel(), (rows.ravel(), cols.ravel())),
                      shape=(n, n))
    rhs = np.zeros(n)
    if coeffs.source is not None and (transport or supg):
        f = np.asarray(coeffs.source(cd.x.reshape(-1, space.dim))).reshape(cd.w.shape)
        loc = np.einsum("mq,mq,qi->mi", cd.w, f, cd.basis)
        if supg:
            loc += cd.delta[:, None] * np.einsum("mq,mq,mqi->mi", cd.w, f, cd.Lphi)
        np.add.at(rhs, space.cells, loc)
    if boundary:
        facets, normals, _ = _boundary(space, FacetTag.INFLOW)
        if len(facets):
            x, w, phi = space.facet_quadrature(facets, facet_degree)
            wgt = boundary_weight(coeffs, x, normals)
            floc = -0.5 * np.einsum("fq,fq,qa,qb->fab", w, wgt, phi, phi)
            k = facets.shape[1]
            fr = np.repeat(facets, k, axis=1).ravel()
            fc = np.tile(facets, (1, k)).ravel()
            A = A + sp.coo_matrix((floc.ravel(), (fr, fc)), shape=(n, n))
            if coeffs.inflow is not None:
                g = np.asarray(coeffs.inflow(x.reshape(-1, space.dim))).reshape(w.shape)
                np.add.at(rhs, facets, -0.5 * np.einsum("fq,fq,fq,qa->fa", w, wgt, g, phi))
    return sp.csr_matrix(A), rhs


def form_action(space: FeSpace, coeffs: TransportCoefficients, u, *, degree: int = VOLUME_DEGREE,
                facet_degree: int = FACET_DEGREE) -> np.ndarray:
    """Vector ``a(u, phi_i)`` over all basis functions.

    ``u`` may be any function accepted by :func:`norm_terms`; for a discrete
    ``u`` this equals ``A @ u``.  Used for consistency checks against
    closed-form solutions.
    """
    _check(space, coeffs)
    cd = cell_data(space, coeffs, degree)
    M, Q = cd.w.shape
    vals, grads = _sample(space, u, cd.x.reshape(-1, space.dim), np.repeat(np.arange(M), Q), (M, Q))
    L = grads[..., :-1] @ coeffs.omega - cd.dS * vals - cd.S * grads[..., -1]
    loc = np.einsum("mq,mq,qi->mi", cd.w, L, cd.basis)
    loc += cd.delta[:, None] * np.einsum("mq,mq,mqi->mi", cd.w, L, cd.Lphi)
    if coeffs.epsilon > 0:
        P = _projector(coeffs.omega)
        Pu = grads[..., :-1] @ P
        Pphi = space.grads[:, :, :-1] @ P
        loc += coeffs.epsilon * np.einsum("mq,mqd,mid->mi", cd.w, Pu, Pphi)
    out = np.zeros(space.n_nodes)
    np.add.at(out, space.cells, loc)
    facets, normals, fcells = _boundary(space, FacetTag.INFLOW)
    if len(facets):
        x, w, phi = space.facet_quadrature(facets, facet_degree)
        F, Qf = w.shape
        fv, _ = _sample(space, u, x.reshape(-1, space.dim), np.repeat(fcells, Qf), (F, Qf))
        wgt = boundary_weight(coeffs, x, normals)
        np.add.at(out, facets, -0.5 * np.einsum("fq,fq,fq,qa->fa", w, wgt, fv, phi))
    return out


def dump_operator(A, path):
    """Write (row, col, value) triples, one nonzero per line."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        fh.write(f"%% {C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for r, c, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


# ---------------------------------------------------------------------- norms
def _sample(space: FeSpace, u, pts, cells, shape):
    """Values and gradients of ``u`` at points lying in the given cells."""
    if isinstance(u, NodalField) or isinstance(u, np.ndarray):
        field = u if isinstance(u, NodalField) else NodalField(space, u)
        vals = field.values_in_cells(cells, pts)
        grads = field.cell_gradients()[cells]
    else:
        vals, grads = u(pts, cells)
    return np.asarray(vals).reshape(shape), np.asarray(grads).reshape(shape + (space.dim,))


def norm_terms(space: FeSpace, coeffs: TransportCoefficients, u, *, mu: float | None = None,
               degree: int = VOLUME_DEGREE, facet_degree: int = FACET_DEGREE) -> dict:
    """Squared contributions to the energy and star norms.

    ``u`` is a NodalField, a coefficient vector, or a callable
    ``u(points, cell_ids) -> (values, gradients)`` for non-discrete functions.
    """
    _check(space, coeffs)
    if mu is None:
        mu = coeffs.mu(space.mesh.domain.e_min)
    if not mu > 0:
        raise ConfigurationError(f"the energy norm needs mu = -S'(E_min) > 0, got {mu}")
    cd = cell_data(space, coeffs, degree)
    M, Q = cd.w.shape
    cells = np.repeat(np.arange(M), Q)
    vals, grads = _sample(space, u, cd.x.reshape(-1, space.dim), cells, (M, Q))
    L = grads[..., :-1] @ coeffs.omega - cd.dS * vals - cd.S * grads[..., -1]
    Pg = grads[..., :-1] @ _projector(coeffs.omega)
    cell_l2 = (cd.w * vals**2).sum(axis=1)
    terms = {
        "diffusion": coeffs.epsilon * float((cd.w * (Pg**2).sum(axis=-1)).sum()),
        "mass": mu * float(cell_l2.sum()),
        "supg": float((cd.delta * (cd.w * L**2).sum(axis=1)).sum()),
        "outflow": 0.0,
        "dual": float((cell_l2 / cd.delta).sum()),
    }
    facets, normals, fcells = _boundary(space, FacetTag.OUTFLOW)
    if len(facets):
        x, w, _ = space.facet_quadrature(facets, facet_degree)
        F, Qf = w.shape
        fv, _ = _sample(space, u, x.reshape(-1, space.dim), np.repeat(fcells, Qf), (F, Qf))
        wgt = boundary_weight(coeffs, x, normals)
        terms["outflow"] = 0.5 * float((w * wgt * fv**2).sum())
    return terms


def energy_norm(space: FeSpace, coeffs: TransportCoefficients, u, **kw) -> float:
    t = norm_terms(space, coeffs, u, **kw)
    return float(np.sqrt(t["diffusion"] + t["mass"] + t["supg"] + t["outflow"]))


def star_norm(space: FeSpace, coeffs: TransportCoefficients, u, **kw) -> float:
    t = norm_terms(space, coeffs, u, **kw)
    return float(np.sqrt(t["diffusion"] + t["mass"] + t["supg"] + t["outflow"] + t["dual"]))


def quadratic_form(A, u) -> float:
    c = u.coefficients if isinstance(u, NodalField) else np.asarray(u)
    return float(c @ (A @ c))
