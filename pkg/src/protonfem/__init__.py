"""Finite-element proton transport in space and energy.

Stabilised (SUPG) and bound-preserving (variational inequality) solvers for
the continuous-slowing-down transport equation, absorbed-dose projection,
residual-based adaptivity and a closed-form Bragg-peak benchmark.
"""
from .analytic import ExactFluence, GaussianSpectrum, error_norms, exact_dose, exact_fluence
from .assembly import TransportCoefficients, assemble_system, energy_norm, star_norm
from .dose import DoseField, EnergyQuadrature, dose_element_constant, dose_galerkin, dose_vi
from .fespace import FeSpace, NodalField, interpolate, quadrature_for
from .materials import BraggKleeman, MaterialField, stopping_power, stopping_power_derivative
from .mesh import Domain, FacetTag, Mesh, build_structured, locate_point, refine
from .solvers import BoundSet, solve_supg, solve_vi

__version__ = "0.1.0"
