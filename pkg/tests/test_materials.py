import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from protonfem.materials import (BONE, LUNG, MUSCLE, PRESETS, WATER, BraggKleeman, MaterialError,
                                 MaterialField, ScatterModel, epsilon_from_hg, material_at, mu,
                                 orbital_field, stopping_power, stopping_power_derivative)


def test_water_62_mev():
    mpmath.mp.dps = 30
    ref = mpmath.mpf(62) ** (1 - mpmath.mpf("1.75")) / (mpmath.mpf("0.00246") * mpmath.mpf("1.75"))
    val = stopping_power(WATER, 62.0)
    assert abs(val - float(ref)) < 1e-12 * float(ref)
    assert abs(val - 10.51) < 0.01


def test_p_equal_one_is_constant():
    m = BraggKleeman(0.01, 1.0)
    E = np.linspace(1, 100, 7)
    assert np.allclose(stopping_power(m, E), 100.0)
    assert np.all(stopping_power_derivative(m, E) == 0)


def test_monotone_water():
    assert stopping_power(WATER, 10.0) > stopping_power(WATER, 62.0)


def test_mu_water_and_fd():
    assert np.isclose(mu(WATER, 1.0), 0.75 / (0.00246 * 1.75), rtol=1e-14)
    assert abs(mu(WATER, 1.0) - 174.2) < 0.05
    h = 1e-6
    fd = (stopping_power(WATER, 1.0 + h) - stopping_power(WATER, 1.0 - h)) / (2 * h)
    assert np.isclose(-fd, mu(WATER, 1.0), rtol=1e-6)


@pytest.mark.parametrize("mat", [WATER, MUSCLE, BONE, LUNG])
def test_mu_positive_table(mat):
    assert mu(mat, 1.0) > 0


@pytest.mark.parametrize("mat", list(PRESETS.values()))
def test_sign_structure_on_grid(mat):
    E = np.linspace(1.0, 70.0, 200)
    assert np.all(stopping_power(mat, E) > 0)
    assert np.all(stopping_power_derivative(mat, E) <= 0)
    assert np.all(np.diff(stopping_power(mat, E)) < 0)


def test_derivative_matches_fd_on_grid():
    E = np.linspace(1.5, 70.0, 30)
    h = 1e-5 * E
    fd = (stopping_power(BONE, E + h) - stopping_power(BONE, E - h)) / (2 * h)
    assert np.allclose(stopping_power_derivative(BONE, E), fd, rtol=1e-7)


@pytest.mark.parametrize("E", [0.0, -1.0, np.nan])
def test_nonpositive_energy_rejected(E):
    with pytest.raises(MaterialError):
        stopping_power(WATER, E)
    with pytest.raises(MaterialError):
        stopping_power_derivative(WATER, E)


@pytest.mark.parametrize("kw", [dict(alpha=0.0, p=1.5), dict(alpha=1e-3, p=2.5),
                                dict(alpha=1e-3, p=0.9), dict(alpha=1e-3, p=1.5, rho=0.0)])
def test_invalid_parameters(kw):
    with pytest.raises(MaterialError):
        BraggKleeman(**kw)


@pytest.mark.parametrize("g,eps", [(0.98, 0.01), (0.0, 0.5), (0.8, 0.1)])
def test_hg_mapping(g, eps):
    assert np.isclose(epsilon_from_hg(g), eps, rtol=0, atol=1e-15)
    assert ScatterModel.from_hg(g).epsilon == epsilon_from_hg(g)


@pytest.mark.parametrize("g", [1.0, -0.1, 1.5])
def test_hg_domain(g):
    with pytest.raises(MaterialError):
        epsilon_from_hg(g)


@given(st.floats(0, 0.999), st.floats(0, 0.999), st.floats(0, 1))
def test_hg_affine(a, b, t):
    c = t * a + (1 - t) * b
    assert np.isclose(epsilon_from_hg(c), t * epsilon_from_hg(a) + (1 - t) * epsilon_from_hg(b), atol=1e-14)
    assert 0 < epsilon_from_hg(a) <= 0.5


def test_scatter_model_consistency():
    with pytest.raises(MaterialError):
        ScatterModel(epsilon=0.2, g_hg=0.98)
    with pytest.raises(MaterialError):
        ScatterModel(epsilon=-0.1)


def test_orbital_lookups():
    f = orbital_field()
    eyelid = material_at(f, [0.3])
    assert eyelid.name == "eyelid" and eyelid.rho == 1.04
    tumour = material_at(f, [3.2])
    assert tumour.name == "tumour" and tumour.rho == 1.0
    assert material_at(f, [0.6]).name == "orbital-bone"
    assert material_at(f, [5.0]).name == "deep-tissue"
    with pytest.raises(MaterialError):
        material_at(f, [5.5])


def test_orbital_piecewise_constant(rng):
    f = orbital_field()
    for (a, b), m in zip(f.intervals, f.materials):
        pts = rng.uniform(a, b, size=20)
        pts = pts[(pts > a) & (pts < b)]
        assert all(material_at(f, [p]) is m for p in pts)
        S = f.stopping_power(pts[:, None], np.full(len(pts), 30.0))
        assert np.allclose(S, stopping_power(m, 30.0))
        assert np.all(f.density(pts[:, None]) == m.rho)


def test_layers_must_partition():
    with pytest.raises(MaterialError):
        MaterialField([((0, 1), WATER), ((1.5, 2), BONE)], [1.0])
    with pytest.raises(MaterialError):
        MaterialField([((0, 1.2), WATER), ((1.0, 2), BONE)], [1.0])
    with pytest.raises(MaterialError):
        MaterialField([], [1.0])


def test_oblique_depth():
    f = MaterialField([((0, 1), WATER), ((1, 3), BONE)], [0.6, 0.8])
    # depth = 0.6 * 1 + 0.8 * 1 = 1.4 -> bone
    assert material_at(f, [1.0, 1.0]) is f.materials[1]
    assert material_at(f, [0.5, 0.5]) is f.materials[0]


def test_field_mu_uses_smallest_alpha():
    f = orbital_field()
    assert f.mu(1.0) == mu(BONE, 1.0)
