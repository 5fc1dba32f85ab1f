import itertools
from math import factorial

import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings, strategies as st

from protonfem.analytic import ExactFluence, GaussianSpectrum
from protonfem.fespace import (FeSpace, FieldError, NodalField, QuadratureError, evaluate, interpolate,
                               quadrature_for)
from protonfem.materials import WATER_BORTFELD, stopping_power
from protonfem.mesh import Domain, PointNotFound, build_structured, refine

from conftest import bragg_domain


def monomial_integral(exps):
    """Exact integral of prod x_i^a_i over the reference simplex (Dirichlet formula)."""
    d = len(exps)
    return np.prod([factorial(a) for a in exps]) / factorial(sum(exps) + d)


def _random_meshes():
    d3 = Domain([(0, 1), (-1, 1)], (1, 3), (0.6, 0.8))
    m2 = build_structured(bragg_domain(), (5, 4))
    return [m2, refine(m2, [0, 3, 7]), build_structured(d3, (2, 2, 2))]


def test_centroid_rule_linear():
    r = quadrature_for(1, 2)
    assert np.isclose(r.integrate_reference(lambda x: x[:, 0] + x[:, 1]), 1 / 3, rtol=1e-14)


def test_degree2_x_squared():
    r = quadrature_for(2, 2)
    assert np.isclose(r.integrate_reference(lambda x: x[:, 0] ** 2), 1 / 12, rtol=1e-14)


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("degree", list(range(0, 13)))
def test_weights_positive_and_sum(dim, degree):
    r = quadrature_for(degree, dim)
    assert np.all(r.weights > 0)
    assert np.isclose(r.weights.sum(), 1 / factorial(dim), rtol=1e-13)
    assert r.degree >= degree
    assert np.allclose(r.points.sum(axis=1), 1.0)


@pytest.mark.parametrize("dim", [1, 2, 3])
@pytest.mark.parametrize("degree", [2, 4, 6, 9, 12])
def test_monomial_exactness(dim, degree):
    r = quadrature_for(degree, dim)
    for exps in itertools.product(range(degree + 1), repeat=dim):
        if sum(exps) > degree:
            continue
        approx = r.integrate_reference(lambda x: np.prod(x ** np.array(exps), axis=1))
        assert np.isclose(approx, monomial_integral(exps), rtol=1e-12, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_degree4_polynomial(seed):
    rng = np.random.default_rng(seed)
    terms = [(a, b) for a in range(5) for b in range(5) if a + b <= 4]
    coef = rng.normal(size=len(terms))
    exact = sum(c * monomial_integral(t) for c, t in zip(coef, terms))
    r = quadrature_for(4, 2)
    approx = r.integrate_reference(lambda x: sum(c * x[:, 0] ** a * x[:, 1] ** b
                                                 for c, (a, b) in zip(coef, terms)))
    assert abs(approx - exact) <= 1e-12 * max(1.0, np.abs(coef).sum())


def test_unsupported_degree():
    with pytest.raises(QuadratureError):
        quadrature_for(40, 2)
    with pytest.raises(QuadratureError):
        quadrature_for(2, 4)


@pytest.mark.parametrize("mesh", _random_meshes())
def test_partition_of_unity_and_gradients(mesh):
    V = FeSpace(mesh)
    assert V.n_nodes == mesh.n_vertices
    assert V.cells.shape[1] == mesh.dim + 1
    _, _, basis = V.cell_quadrature(6)
    assert np.allclose(basis.sum(axis=1), 1.0, atol=1e-13)
    assert np.allclose(V.grads.sum(axis=1), 0.0, atol=1e-13 * np.abs(V.grads).max())
    assert np.allclose(V.volumes, mesh.volumes())


@pytest.mark.parametrize("mesh", _random_meshes())
def test_affine_reproduction(mesh, rng):
    V = FeSpace(mesh)
    a = rng.normal(size=mesh.dim)
    f = lambda x: 0.3 + x @ a
    u = interpolate(V, f)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    pts = rng.uniform(lo, hi, size=(60, mesh.dim))
    assert np.allclose(u.evaluate(pts), f(pts), atol=1e-12 * (1 + np.abs(f(pts)).max()))
    assert np.allclose(u.cell_gradients(), a[None, :], rtol=1e-10)


def test_constant_field(rng):
    V = FeSpace(build_structured(bragg_domain(), (4, 6)))
    one = interpolate(V, lambda x: np.ones(len(x)))
    assert np.all(one.coefficients == 1)
    pts = rng.uniform([0, 1], [4, 70], size=(20, 2))
    assert np.allclose(one.evaluate(pts), 1.0)


def test_evaluate_nodes_and_centroids(rng):
    V = FeSpace(build_structured(bragg_domain(), (4, 6)))
    u = NodalField(V, rng.normal(size=V.n_nodes))
    assert np.allclose(u.evaluate(V.coordinates), u.coefficients, atol=1e-12)
    assert np.allclose(u.evaluate(V.mesh.centroids()), u.coefficients[V.cells].mean(axis=1))
    assert np.isclose(evaluate(u, V.coordinates[3]), u.coefficients[3])
    with pytest.raises(PointNotFound):
        u.evaluate([[10.0, 10.0]])


def test_interpolate_exact_fluence():
    spec = GaussianSpectrum(62.0, 0.01, 1.21e9, (1.0, 70.0))
    ex = ExactFluence(spec, WATER_BORTFELD)
    V = FeSpace(build_structured(bragg_domain(), (3, 3)))
    u = interpolate(V, ex)
    a, p = WATER_BORTFELD.alpha, WATER_BORTFELD.p
    sigma = 0.01 * 62.0
    mass, _ = quad(lambda e: np.exp(-((e - 62.0) ** 2) / (2 * sigma**2)), 1.0, 70.0, points=[62.0])
    for (z, E), val in zip(V.coordinates, u.coefficients):
        # S psi is constant along the characteristic through (z, E), entering at energy s
        s = (E**p + z / a) ** (1 / p)
        ref = 1.21e9 / mass * np.exp(-((s - 62.0) ** 2) / (2 * sigma**2)) * stopping_power(WATER_BORTFELD, s) / stopping_power(WATER_BORTFELD, E)
        assert np.isclose(val, ref, rtol=1e-9, atol=1e-250)


def test_interpolate_rejects_nonfinite():
    V = FeSpace(build_structured(bragg_domain(), (2, 2)))
    with pytest.raises(FieldError, match="node 0"):
        interpolate(V, lambda x: np.where(np.arange(len(x)) == 0, np.nan, 1.0))
    with pytest.raises(FieldError):
        NodalField(V, np.zeros(3))
