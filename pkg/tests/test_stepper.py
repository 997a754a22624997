import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from bvmr.battery import autonomous_fem, lipschitz_scalar, step_scalar
from bvmr.bv_time import BVModulus, PiecewiseAffine
from bvmr.forms import NonAutonomousForm, build_diagonal, build_scalar
from bvmr.gelfand import GelfandSpace
from bvmr.stepper import (PerturbationSpec, SolverError, SourceTerm, TimeGrid, lp_time_norm, modulus_of_continuity_V,
                          mr_norms, prepare_grid, solve_linear, solve_perturbed)


def test_single_implicit_euler_step():
    tr = solve_linear(build_scalar(1.0), 10, u0=[1.0])
    assert tr.states[1, 0] == pytest.approx(1.0 / 1.1, rel=1e-15)
    assert tr.final[0] == pytest.approx(1.1 ** -10, rel=1e-13)


def test_step_problem_matches_discrete_closed_form():
    # left limits: a = 1 on the cells up to the jump, a = 2 afterwards
    K = 40
    tr = step_scalar().solve(K)
    dt = 1.0 / K
    expected = (1 + dt) ** (-K // 2) * (1 + 2 * dt) ** (-K // 2)
    assert tr.final[0] == pytest.approx(expected, rel=1e-13)
    assert tr.inserted_times == ()


def test_diagonal_system_decouples():
    a = PiecewiseAffine.steps([0.5], [1.0, 2.0])
    tr = solve_linear(build_diagonal([1.0, a]), 50, u0=[1.0, 2.0])
    s1 = solve_linear(build_scalar(1.0), 50, u0=[1.0])
    s2 = solve_linear(build_scalar(a), 50, u0=[2.0])
    assert np.allclose(tr.states[:, 0], s1.states[:, 0], rtol=1e-14)
    assert np.allclose(tr.states[:, 1], s2.states[:, 0], rtol=1e-14)


def test_unit_multiplier_reproduces_linear_solver():
    prob = autonomous_fem(8)
    lin = solve_linear(prob.form, 30, prob.f, prob.u0)
    per = solve_perturbed(prob.form, PerturbationSpec(B=1.0), 30, prob.f, prob.u0)
    assert np.array_equal(lin.states, per.states)


def test_perturbation_oracles():
    form = build_scalar(1.0)
    tr = solve_perturbed(form, PerturbationSpec(B=2.0), 800, u0=[1.0])
    assert abs(tr.final[0] - math.exp(-2.0)) < 5e-4
    tr = solve_perturbed(form, PerturbationSpec(C=lambda t, side: np.array([[1.0]]), h=1.0), 800, u0=[1.0])
    assert abs(tr.final[0] - math.exp(-2.0)) < 5e-4


def test_callable_multiplier_needs_bounds_and_is_checked():
    with pytest.raises(ValueError, match="explicit"):
        PerturbationSpec(B=lambda t, side: 2.0)
    pert = PerturbationSpec(B=lambda t, side: 1.0 + t, beta0=1.0, beta1=1.5)
    with pytest.raises(ValueError, match="outside"):
        solve_perturbed(build_scalar(1.0), pert, 10, u0=[1.0])
    with pytest.raises(ValueError):
        PerturbationSpec(B=0.0)


def test_steady_state_norms():
    # u' + 2u = 2 with u(0) = 1 stays at 1
    tr = solve_linear(build_scalar(2.0), 20, f=[2.0], u0=[1.0])
    assert np.allclose(tr.states, 1.0)
    n = mr_norms(tr)
    assert n.au_l2h == pytest.approx(2.0)
    assert n.du_l2h == pytest.approx(0.0, abs=1e-14)
    assert n.mr_norm_sq == pytest.approx(4.0)
    assert set(n.to_dict()) == {"du_l2h", "au_l2h", "u_l2v", "u_supv", "u_l2h", "mr_norm_sq"}


def test_lp_time_norm():
    tr = solve_linear(build_scalar(1.0, T=16.0), 32, f=[1.0], u0=[1.0])
    assert lp_time_norm(tr, 4) == pytest.approx(2.0)
    assert lp_time_norm(tr, math.inf, "H") == pytest.approx(1.0)
    with pytest.raises(ValueError):
        lp_time_norm(tr, 0.5)


def test_missing_jump_is_inserted():
    form = build_scalar(PiecewiseAffine.steps([0.35], [1.0, 2.0]))
    tr = solve_linear(form, 10, u0=[1.0])
    assert tr.inserted_times == (0.35,)
    assert tr.grid.K == 11
    grid = prepare_grid(form, np.linspace(0.0, 1.0, 5))
    assert 0.35 in grid.times
    with pytest.raises(ValueError, match="horizon"):
        prepare_grid(form, np.linspace(0.0, 2.0, 5))


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid([0.0, 0.5, 0.5, 1.0])
    with pytest.raises(ValueError):
        TimeGrid.uniform(1.0, 0)


def test_crank_nicolson_is_second_order():
    prob = lipschitz_scalar()
    ref = solve_ivp(lambda t, u: 1.0 - (1.0 + t) * u, (0.0, 1.0), [1.0], rtol=1e-12, atol=1e-14).y[0, -1]
    errs = [abs(solve_linear(prob.form, K, prob.f, prob.u0, scheme="crank_nicolson").final[0] - ref)
            for K in (20, 40, 80)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(1.8 < o < 2.2 for o in orders)


def test_singular_step_raises_with_index():
    form = NonAutonomousForm(GelfandSpace.identity(1), lambda t, side="raw": np.array([[-10.0]]),
                             10.0, 1.0, BVModulus(T=1.0), 1.0)
    with pytest.raises(SolverError, match="step 0"):
        solve_linear(form, 10, u0=[1.0])


def test_source_from_samples():
    src = SourceTerm.from_samples([0.0, 0.5], [[1.0], [3.0]])
    assert src(0.25)[0] == 1.0 and src(0.75)[0] == 3.0
    lin = SourceTerm.from_samples([0.0, 1.0], [[0.0], [2.0]], kind="linear")
    assert lin(0.25)[0] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        SourceTerm.from_samples([0.0, 1.0], [[1.0]], kind="cubic")


def test_source_uses_cell_midpoints():
    f = SourceTerm.from_function(lambda t: [t], 1)
    tr = solve_linear(build_scalar(1.0), 4, f=f, u0=[0.0])
    assert np.allclose(tr.sources[:, 0], [0.125, 0.375, 0.625, 0.875])


def test_modulus_of_continuity_window():
    tr = solve_linear(build_scalar(1.0), 10, u0=[1.0])
    one = modulus_of_continuity_V(tr)
    assert one == pytest.approx(1.0 - 1.0 / 1.1)
    assert modulus_of_continuity_V(tr, 0.2) == pytest.approx(1.0 - 1.1 ** -2)
    assert modulus_of_continuity_V(tr, 0.0) == 0.0


def test_trajectory_csv(tmp_path):
    tr = solve_linear(build_scalar(1.0), 4, u0=[1.0])
    path = tmp_path / "tr.csv"
    tr.to_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "t,u0" and len(rows) == 6
    assert float(rows[-1].split(",")[1]) == tr.final[0]


def test_initial_value_required_and_checked():
    with pytest.raises(ValueError, match="u0"):
        solve_linear(build_scalar(1.0), 4)
    with pytest.raises(ValueError):
        solve_linear(build_scalar(1.0), 4, u0=[1.0, 2.0])
