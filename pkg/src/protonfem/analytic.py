"""Closed-form pristine Bragg-peak benchmark (no angular diffusion).

The inflow spectrum is a Gaussian of relative width ``delta`` around
``E0``, normalised so that it integrates to the total fluence over the
energy window.  Along characteristics ``E**p + depth/alpha`` is constant, so

    psi(x, E) = A**((1-p)/p) * g(A**(1/p)) * E**(p-1),   A = E**p + (omega . x)/alpha.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .assembly import TransportCoefficients, norm_terms
from .fespace import NodalField
from .materials import BraggKleeman, stopping_power


@dataclass(frozen=True)
class GaussianSpectrum:
    E0: float = 62.0
    delta: float = 0.01
    fluence: float = 1.21e9
    energy_interval: tuple[float, float] = (1.0, 70.0)
    C: float = field(init=False)

    def __post_init__(self):
        s = self.sigma * np.sqrt(2.0)
        lo, hi = self.energy_interval
        mass = self.sigma * np.sqrt(np.pi / 2.0) * (erf((hi - self.E0) / s) - erf((lo - self.E0) / s))
        object.__setattr__(self, "C", 1.0 / mass)

    @property
    def sigma(self) -> float:
        return self.delta * self.E0

    @property
    def peak(self) -> float:
        return self.fluence * self.C

    def __call__(self, E):
        E = np.asarray(E, dtype=float)
        return self.peak * np.exp(-((E - self.E0) ** 2) / (2.0 * self.sigma**2))

    def derivative(self, E):
        E = np.asarray(E, dtype=float)
        return -self(E) * (E - self.E0) / self.sigma**2


def spectrum_value(spec: GaussianSpectrum, E):
    return spec(E)


@dataclass(frozen=True)
class ExactFluence:
    spectrum: GaussianSpectrum
    material: BraggKleeman
    omega: tuple = (1.0,)

    def _shift(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        depth = pts[:, :-1] @ np.asarray(self.omega, dtype=float)
        E = pts[:, -1]
        return depth, E, E**self.material.p + depth / self.material.alpha

    def __call__(self, points):
        """Fluence at (n, d_tot) points; zero where the shifted energy is not positive."""
        _, E, A = self._shift(points)
        p = self.material.p
        out = np.zeros_like(A)
        ok = A > 0
        Ap = A[ok]
        out[ok] = Ap ** ((1 - p) / p) * self.spectrum(Ap ** (1 / p)) * E[ok] ** (p - 1)
        return out

    def gradient(self, points):
        """Analytic gradient, (n, d_tot), spatial components first."""
        _, E, A = self._shift(points)
        p, alpha = self.material.p, self.material.alpha
        grad = np.zeros((len(A), len(self.omega) + 1))
        ok = A > 0
        A, Eo = A[ok], E[ok]
        e = A ** (1 / p)
        F = A ** ((1 - p) / p) * self.spectrum(e)
        dF = ((1 - p) / p) * A ** ((1 - p) / p - 1) * self.spectrum(e) \
            + A ** ((1 - p) / p) * self.spectrum.derivative(e) * (1 / p) * A ** (1 / p - 1)
        dpsi_ddepth = Eo ** (p - 1) * dF / alpha
        dpsi_dE = (p - 1) * Eo ** (p - 2) * F + Eo ** (p - 1) * dF * p * Eo ** (p - 1)
        grad[ok, :-1] = dpsi_ddepth[:, None] * np.asarray(self.omega)[None, :]
        grad[ok, -1] = dpsi_dE
        return grad

    def gradient_fd(self, points, h: float = 1e-5):
        """Central-difference gradient, step ``h`` relative to each coordinate's scale."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        grad = np.zeros_like(pts)
        for k in range(pts.shape[1]):
            step = h * max(1.0, float(np.abs(pts[:, k]).max()))
            e = np.zeros(pts.shape[1])
            e[k] = step
            grad[:, k] = (self(pts + e) - self(pts - e)) / (2 * step)
        return grad

    @property
    def range(self) -> float:
        return self.material.range(self.spectrum.E0)


def exact_fluence(ex: ExactFluence, x, E):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    E = np.broadcast_to(np.asarray(E, dtype=float), (len(x),))
    return ex(np.column_stack([x, E]))


def _composite_gauss(a, b, n_panels=4000, order=5):
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    mid, half = (edges[1:] + edges[:-1]) / 2, (edges[1:] - edges[:-1]) / 2
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def exact_dose(ex: ExactFluence, x, energy_interval=None, rho: float | None = None):
    """Dose integral of S psi / rho over energy at spatial points ``x`` (n, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lo, hi = energy_interval or ex.spectrum.energy_interval
    nodes, weights = _composite_gauss(lo, hi)
    rho = ex.material.rho if rho is None else rho
    S = stopping_power(ex.material, nodes)
    out = np.empty(len(x))
    for i, xi in enumerate(x):
        pts = np.column_stack([np.repeat(xi[None, :], len(nodes), 0), nodes])
        out[i] = weights @ (S * ex(pts)) / rho
    return out


def error_callable(ex: ExactFluence, psi_h: NodalField | None):
    """``(points, cells) -> (values, gradients)`` of psi - psi_h, for the norm machinery."""
    grads_h = psi_h.cell_gradients() if psi_h is not None else None

    def diff(points, cells):
        v = ex(points)
        g = ex.gradient(points)
        if psi_h is not None:
            v = v - psi_h.values_in_cells(cells, points)
            g = g - grads_h[cells]
        return v, g

    return diff


def error_norms(psi_h: NodalField, ex: ExactFluence, coeffs: TransportCoefficients, **kw):
    """(L2 error, energy-norm error) of ``psi_h`` against the exact fluence."""
    diff = error_callable(ex, psi_h)
    terms = norm_terms(psi_h.space, coeffs, diff, **kw)
    mu = kw.get("mu") or coeffs.mu(psi_h.space.mesh.domain.e_min)
    l2 = np.sqrt(terms["mass"] / mu)
    en = np.sqrt(terms["diffusion"] + terms["mass"] + terms["supg"] + terms["outflow"])
    return float(l2), float(en)
