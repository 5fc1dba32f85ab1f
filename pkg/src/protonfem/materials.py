"""Stopping-power models and layered media.

Stopping power follows the Bragg--Kleeman range-energy law

    S(E) = E**(1 - p) / (alpha * p)          [MeV/cm]

with ``alpha`` in cm MeV**-p.  Media are stacked as planar layers along the
beam direction; a point belongs to the layer containing its depth
``omega . x``, with interfaces assigned to the deeper layer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class MaterialError(ValueError):
    """Invalid material parameters or out-of-range lookups."""


@dataclass(frozen=True)
class BraggKleeman:
    alpha: float
    p: float
    rho: float = 1.0
    name: str = ""

    def __post_init__(self):
        if not self.alpha > 0:
            raise MaterialError(f"alpha must be positive, got {self.alpha}")
        if not self.rho > 0:
            raise MaterialError(f"rho must be positive, got {self.rho}")
        if not 1.0 <= self.p <= 2.0:
            raise MaterialError(f"p must lie in [1, 2], got {self.p}")

    def with_density(self, rho: float, name: str | None = None) -> "BraggKleeman":
        return BraggKleeman(self.alpha, self.p, rho, self.name if name is None else name)

    def range(self, energy: float) -> float:
        """Continuous-slowing-down range alpha * E**p in cm."""
        return self.alpha * energy**self.p


# Range-energy parameters for biological media.
WATER = BraggKleeman(alpha=0.00246, p=1.75, rho=1.0, name="water")
MUSCLE = BraggKleeman(alpha=0.0021, p=1.75, rho=1.0, name="muscle")
BONE = BraggKleeman(alpha=0.0011, p=1.77, rho=1.0, name="bone")
LUNG = BraggKleeman(alpha=0.0033, p=1.74, rho=1.0, name="lung")
# Water values used by the pristine Bragg-peak benchmark.
WATER_BORTFELD = BraggKleeman(alpha=2.2e-3, p=1.77, rho=1.0, name="water-bortfeld")

PRESETS = {m.name: m for m in (WATER, MUSCLE, BONE, LUNG, WATER_BORTFELD)}


def _check_energy(E):
    E = np.asarray(E, dtype=float)
    if np.any(~(E > 0)):
        raise MaterialError("stopping power is only defined for E > 0")
    return E


def stopping_power(mat: BraggKleeman, E):
    """S(E) in MeV/cm.  Accepts scalars or arrays."""
    E = _check_energy(E)
    return E ** (1.0 - mat.p) / (mat.alpha * mat.p)


def stopping_power_derivative(mat: BraggKleeman, E):
    """dS/dE in MeV/cm per MeV; non-positive for p >= 1."""
    E = _check_energy(E)
    return (1.0 - mat.p) / (mat.alpha * mat.p) * E ** (-mat.p)


def mu(mat: BraggKleeman, e_min: float) -> float:
    """Dissipation constant -S'(E_min)."""
    return float(-stopping_power_derivative(mat, e_min))


def epsilon_from_hg(g_hg: float) -> float:
    """Angular diffusion coefficient of the Henyey--Greenstein Fokker--Planck limit."""
    if not 0.0 <= g_hg < 1.0:
        raise MaterialError(f"Henyey-Greenstein anisotropy must lie in [0, 1), got {g_hg}")
    return 0.5 * (1.0 - g_hg)


@dataclass(frozen=True)
class ScatterModel:
    epsilon: float = 0.0
    g_hg: float | None = None

    def __post_init__(self):
        if self.g_hg is not None:
            expected = epsilon_from_hg(self.g_hg)
            if not np.isclose(self.epsilon, expected, rtol=0, atol=1e-15):
                raise MaterialError(
                    f"epsilon={self.epsilon} inconsistent with g_hg={self.g_hg} (expected {expected})"
                )
        if self.epsilon < 0:
            raise MaterialError(f"epsilon must be non-negative, got {self.epsilon}")

    @classmethod
    def from_hg(cls, g_hg: float) -> "ScatterModel":
        return cls(epsilon=epsilon_from_hg(g_hg), g_hg=g_hg)


class MaterialField:
    """Planar layers stacked along the beam direction.

    Parameters
    ----------
    layers : sequence of ((depth_lo, depth_hi), BraggKleeman)
        Contiguous depth intervals, ordered from the entry surface.
    omega : beam direction used to convert positions into depth.
    """

    def __init__(self, layers: Sequence[tuple[tuple[float, float], BraggKleeman]], omega):
        if not layers:
            raise MaterialError("at least one layer is required")
        self.omega = np.asarray(omega, dtype=float)
        self.intervals = [(float(a), float(b)) for (a, b), _ in layers]
        self.materials = [m for _, m in layers]
        for (a, b) in self.intervals:
            if not b > a:
                raise MaterialError(f"empty layer interval [{a}, {b}]")
        for (_, b), (a, _) in zip(self.intervals[:-1], self.intervals[1:]):
            if not np.isclose(a, b, rtol=0, atol=1e-12):
                raise MaterialError(f"layers must be contiguous: gap or overlap at {b} / {a}")
        self.interfaces = np.array([a for a, _ in self.intervals[1:]])
        self.depth_range = (self.intervals[0][0], self.intervals[-1][1])
        self._alpha = np.array([m.alpha for m in self.materials])
        self._p = np.array([m.p for m in self.materials])
        self._rho = np.array([m.rho for m in self.materials])

    @classmethod
    def homogeneous(cls, mat: BraggKleeman, omega, depth_range=(-np.inf, np.inf)):
        return cls([(depth_range, mat)], omega)

    @property
    def is_homogeneous(self) -> bool:
        return len(self.materials) == 1

    def depth(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x @ self.omega

    def layer_index(self, x, tol: float = 1e-9):
        """Layer id for each spatial point (rows of ``x``)."""
        d = self.depth(x)
        lo, hi = self.depth_range
        if np.any(d < lo - tol) or np.any(d > hi + tol):
            raise MaterialError("depth outside all material layers")
        return np.searchsorted(self.interfaces, d, side="right")

    def material_at(self, x) -> BraggKleeman:
        return self.materials[int(self.layer_index(np.asarray(x, dtype=float).reshape(1, -1))[0])]

    def stopping_power(self, x, E):
        """S at paired spatial points ``x`` (n, d) and energies ``E`` (n,)."""
        k = self.layer_index(x)
        E = _check_energy(E)
        a, p = self._alpha[k], self._p[k]
        return E ** (1.0 - p) / (a * p)

    def stopping_power_derivative(self, x, E):
        k = self.layer_index(x)
        E = _check_energy(E)
        a, p = self._alpha[k], self._p[k]
        return (1.0 - p) / (a * p) * E ** (-p)

    def density(self, x):
        return self._rho[self.layer_index(x)]

    def mu(self, e_min: float) -> float:
        """-S'(E_min) of the smallest-alpha layer, the value used in the energy norm."""
        k = int(np.argmin(self._alpha))
        return mu(self.materials[k], e_min)


def material_at(field: MaterialField, x) -> BraggKleeman:
    return field.material_at(x)


# Orbital layer stack: (name, thickness-bounds, stopping-power row, density).
ORBITAL_LAYERS = (
    ("eyelid", (0.0, 0.6), MUSCLE, 1.04),
    ("orbital-bone", (0.6, 0.9), BONE, 1.85),
    ("orbital-fat", (0.9, 2.7), LUNG, 0.3),
    ("tumour", (2.7, 3.7), WATER, 1.0),
    ("post-tumour", (3.7, 4.1), WATER, 1.0),
    ("skull", (4.1, 4.4), BONE, 1.85),
    ("deep-tissue", (4.4, 5.0), MUSCLE, 1.04),
)


def orbital_field(omega=(1.0,)) -> MaterialField:
    return MaterialField(
        [(bounds, row.with_density(rho, name)) for name, bounds, row, rho in ORBITAL_LAYERS],
        omega,
    )
