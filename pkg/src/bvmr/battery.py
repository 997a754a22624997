"""Standard problem set on ``[0, 1]`` used by the tests and the command line.

Each entry is a :class:`Problem` with a form, source, initial value and an
optional perturbation.  ``solve`` dispatches to the linear or perturbed
solver.
"""

from dataclasses import dataclass

import numpy as np

from .bv_time import PiecewiseAffine
from .forms import Mesh1D, build_elliptic_1d, build_robin_1d, build_scalar
from .stepper import PerturbationSpec, SourceTerm, solve_linear, solve_perturbed


@dataclass
class Problem:
    name: str
    form: object
    u0: np.ndarray
    f: object = None
    perturbation: PerturbationSpec = None
    description: str = ""

    def solve(self, grid):
        if self.perturbation is not None:
            return solve_perturbed(self.form, self.perturbation, grid, self.f, self.u0)
        return solve_linear(self.form, grid, self.f, self.u0)


def step_scalar():
    """``a = 1`` on ``[0, 0.5)``, ``2`` on ``[0.5, 1]``; ``u(1) = exp(-3/2)``."""
    form = build_scalar(PiecewiseAffine.steps([0.5], [1.0, 2.0]))
    return Problem("one_jump", form, np.array([1.0]), description="scalar step coefficient")


def autonomous_scalar():
    return Problem("autonomous", build_scalar(1.0), np.array([1.0]), description="scalar a = 1")


def lipschitz_scalar(source=1.0):
    form = build_scalar(PiecewiseAffine.affine(1.0, 1.0))
    return Problem("lipschitz", form, np.array([1.0]), SourceTerm.constant([source]),
                   description="scalar a(t) = 1 + t")


def autonomous_fem(n_elements=16):
    mesh = Mesh1D(n_elements)
    form, _ = build_elliptic_1d(mesh, 1.0)
    x = mesh.dof_coordinates()
    return Problem("autonomous_fem", form, np.sin(np.pi * x), SourceTerm.constant(np.ones(x.size)),
                   description="heat equation, Dirichlet")


def multi_jump_fem(n_elements=16):
    """Two x cells: one coefficient jumps three times (once downward), the other ramps then jumps."""
    mesh = Mesh1D(n_elements)
    left = PiecewiseAffine.steps([0.25, 0.5, 0.75], [1.0, 2.0, 1.5, 3.0])
    right = PiecewiseAffine([0.0, 0.5, 1.0], [1.0, 2.0], [1.0, 0.0])
    form, _ = build_elliptic_1d(mesh, [left, right], x_breaks=[0.0, 0.5, 1.0])
    x = mesh.dof_coordinates()
    return Problem("three_jump", form, np.sin(np.pi * x), SourceTerm.constant(np.ones(x.size)),
                   description="three jumps plus an absolutely continuous part")


def robin_fem(n_elements=16):
    mesh = Mesh1D(n_elements, "robin")
    form = build_robin_1d(mesh, PiecewiseAffine.steps([0.5], [1.0, 3.0]), PiecewiseAffine.affine(1.0, 1.0))
    x = mesh.dof_coordinates()
    return Problem("robin", form, np.cos(np.pi * x), description="Robin coefficients with a jump")


def perturbed_scalar():
    """``u' + 2 u = 0``; ``u(1) = exp(-2)``."""
    return Problem("perturbed", build_scalar(1.0), np.array([1.0]),
                   perturbation=PerturbationSpec(B=2.0), description="scalar, B = 2")


def perturbed_fem(n_elements=16):
    """Step diffusion with drift and potential routed to the lower-order part."""
    mesh = Mesh1D(n_elements)
    coef = PiecewiseAffine.steps([0.5], [1.0, 2.0])
    form, pert = build_elliptic_1d(mesh, coef, drift=0.5, potential=2.0)
    x = mesh.dof_coordinates()
    return Problem("perturbed_fem", form, np.sin(np.pi * x), SourceTerm.constant(np.ones(x.size)),
                   perturbation=pert, description="drift and potential as perturbation")


def standard_battery():
    """Problems covering the autonomous, Lipschitz, jump, Robin and perturbed cases."""
    problems = [autonomous_scalar(), autonomous_fem(), lipschitz_scalar(), step_scalar(),
                multi_jump_fem(), robin_fem(), perturbed_scalar(), perturbed_fem()]
    return {p.name: p for p in problems}
