import json

import numpy as np
import pytest

from bvmr.forms import Mesh1D, build_elliptic_1d, build_scalar
from bvmr.quasilinear import (F_FUNCTIONS, M_FUNCTIONS, FixedPointError, QuasilinearSpec, apriori_bound_check,
                              frozen_coefficients, solve_fixed_point)
from bvmr.stepper import solve_linear


def _scalar_spec(m="one", f="zero", beta1=1.0, **kw):
    return QuasilinearSpec(M_FUNCTIONS[m], F_FUNCTIONS[f], beta0=1.0, beta1=beta1, **kw)


def test_linear_case_is_reached_in_two_undamped_iterations():
    form = build_scalar(1.0)
    rep = solve_fixed_point(_scalar_spec(), form, 50, [1.0], theta=1.0)
    assert rep.converged and rep.iterations == 2
    lin = solve_linear(form, 50, u0=[1.0])
    assert np.allclose(rep.trajectory.states, lin.states, rtol=1e-14)
    assert rep.residual < 1e-12


def test_spec_validation():
    with pytest.raises(ValueError):
        QuasilinearSpec(M_FUNCTIONS["one"], F_FUNCTIONS["zero"], beta0=2.0, beta1=1.0)
    with pytest.raises(ValueError):
        _scalar_spec(q=1.0)
    assert _scalar_spec(q=2.0).p == pytest.approx(4.0)


def test_multiplier_outside_declared_range_raises():
    spec = QuasilinearSpec(lambda t, x, u, ux: 0.5 * np.ones_like(u), F_FUNCTIONS["zero"], beta0=1.0, beta1=2.0)
    form = build_scalar(1.0)
    with pytest.raises(ValueError, match="leaves"):
        frozen_coefficients(spec, form, solve_linear(form, 10, u0=[1.0]).grid, np.ones((11, 1)))


def test_growth_bound_of_sine():
    # |sin u|^2 <= u^2 <= u^2 + u_x^2
    assert _scalar_spec(f="sin", h=1.0).check_growth() <= 0.0
    assert _scalar_spec(f="one", g_src=0.5).check_growth() > 0.0


def test_iteration_cap_reports_candidates():
    spec = _scalar_spec("saturating", beta1=2.0)
    rep = solve_fixed_point(spec, build_scalar(1.0), 50, [1.0], max_iter=1)
    assert not rep.converged and rep.iterations == 1
    assert len(rep.candidates) == 2
    d = json.loads(rep.to_json())
    assert len(d["candidate_final_states"]) == 2


def test_non_finite_source_raises_with_iteration():
    spec = QuasilinearSpec(M_FUNCTIONS["one"], lambda t, x, u, ux: np.full_like(u, np.nan), beta0=1.0, beta1=1.0)
    with pytest.raises(FixedPointError, match="iteration 1"):
        solve_fixed_point(spec, build_scalar(1.0), 10, [1.0])


def test_argument_validation():
    spec, form = _scalar_spec(), build_scalar(1.0)
    for kw in (dict(tol=0.0), dict(max_iter=0), dict(theta=0.0), dict(theta=1.5)):
        with pytest.raises(ValueError):
            solve_fixed_point(spec, form, 10, [1.0], **kw)


def test_small_fem_problem_converges_within_bounds():
    mesh = Mesh1D(8)
    form, _ = build_elliptic_1d(mesh, 1.0)
    spec = QuasilinearSpec(M_FUNCTIONS["one_plus_u2_capped"], F_FUNCTIONS["one"], beta0=1.0, beta1=2.0, g_src=1.0)
    u0 = np.sin(np.pi * mesh.dof_coordinates())
    rep = solve_fixed_point(spec, form, 100, u0, max_iter=60)
    assert rep.converged
    assert rep.residual < 1e-6
    bound = apriori_bound_check(rep, spec, form, u0)
    assert bound.passed and bound.metadata["both_pass"]
