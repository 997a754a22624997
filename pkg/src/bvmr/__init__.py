"""Solve ``u' + A(t) u = f`` with a time-dependent form and audit the discrete solution.

Modules
-------
gelfand      finite-dimensional triples V -> H -> V'
bv_time      bounded-variation moduli, Stieltjes measures, time mollification
forms        non-autonomous forms and finite element builders
stepper      implicit time stepping and trajectory norms
estimates    numerical checks of the energy and regularity inequalities
quasilinear  damped Picard iteration for the quasilinear problem
cli          config-driven experiment runner
"""

from .bv_time import BVModulus, Mollifier, PiecewiseAffine
from .forms import AffineForm, Mesh1D, NonAutonomousForm, build_elliptic_1d, build_robin_1d, build_scalar
from .gelfand import GelfandSpace
from .stepper import PerturbationSpec, SourceTerm, TimeGrid, mr_norms, solve_linear, solve_perturbed

__version__ = "0.1.0"

__all__ = [
    "AffineForm", "BVModulus", "GelfandSpace", "Mesh1D", "Mollifier", "NonAutonomousForm",
    "PerturbationSpec", "PiecewiseAffine", "SourceTerm", "TimeGrid", "build_elliptic_1d",
    "build_robin_1d", "build_scalar", "mr_norms", "solve_linear", "solve_perturbed",
]
