"""Acceptance criteria, one test per criterion.

Each test prints a single ``ACCEPTANCE <id> PASS|FAIL`` line with the
measured numbers.  Tolerances are pinned here.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from bvmr import estimates as E
from bvmr.battery import perturbed_scalar, standard_battery, step_scalar, lipschitz_scalar
from bvmr.bv_time import Mollifier
from bvmr.forms import build_scalar, mollify_form, probe_constants
from bvmr.stepper import PerturbationSpec, modulus_of_continuity_V
from bvmr.quasilinear import (F_FUNCTIONS, M_FUNCTIONS, QuasilinearSpec, apriori_bound_check,
                              homotopy_witness, solve_fixed_point)

K_BATTERY = 800
DT = 1.0 / K_BATTERY

FINAL_TOL = 5e-3          # criteria 1 and 8
ORDER_RANGE = (0.8, 1.2)  # criterion 1
INTERP_TOL = 1e-10        # criterion 2
SLACK_FACTOR = 10.0       # criteria 3, 4, 5: slack >= -10 dt (times scale for 4)
CONT_RATIO = 1.7          # criterion 6
PROBE_TOL = 1e-12         # criterion 7
MAX_PICARD = 25           # criterion 9
ENERGY_ORDER = 0.8        # criterion 10


def _report(capsys, ident, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {ident} {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def battery_runs():
    probs = standard_battery()
    return {name: (p, p.solve(K_BATTERY)) for name, p in probs.items()}


def test_c01_scalar_step_oracle(capsys):
    prob = step_scalar()
    exact = math.exp(-1.5)
    start = time.perf_counter()
    traj = prob.solve(800)
    elapsed = time.perf_counter() - start
    err800 = abs(traj.final[0] - exact)
    errs = [abs(prob.solve(K).final[0] - exact) for K in (100, 200, 400, 800)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    ok = err800 <= FINAL_TOL and all(ORDER_RANGE[0] <= o <= ORDER_RANGE[1] for o in orders) and elapsed < 1.0
    _report(capsys, "C01", ok, f"u(1)={traj.final[0]:.6f} err={err800:.2e} orders={np.round(orders, 3).tolist()} "
                               f"time={elapsed:.3f}s")


def test_c02_interpolation_inequality(capsys, battery_runs):
    slacks = {name: E.interpolation_check(tr).slack for name, (_, tr) in battery_runs.items()}
    worst = min(slacks.values())
    _report(capsys, "C02", worst >= -INTERP_TOL, f"min slack={worst:.3e} over {len(slacks)} trajectories")


def test_c03_lions_estimate(capsys, battery_runs):
    reps = {name: E.lions_check(tr) for name, (_, tr) in battery_runs.items()}
    worst = min(r.slack for r in reps.values())
    ok = all(r.slack >= -SLACK_FACTOR * DT for r in reps.values())
    _report(capsys, "C03", ok, f"min slack={worst:.3e} bound=-{SLACK_FACTOR * DT:.1e} problems={sorted(reps)}")


def test_c04_explicit_constant_and_sup_v(capsys, battery_runs):
    symmetric = {n: v for n, v in battery_runs.items() if v[0].perturbation is None}
    lines, ok = [], True
    for name, (_, tr) in symmetric.items():
        tol = SLACK_FACTOR * DT * E.problem_scale(tr)
        mr, sup = E.mr_bound_check(tr), E.sup_v_bound_check(tr)
        ok &= mr.slack >= -tol and sup.slack >= -tol
        lines.append(f"{name}:{mr.slack:.3g}/{sup.slack:.3g}")
    _report(capsys, "C04", ok, "mr/sup slacks " + " ".join(lines))


def test_c05_bv_energy_every_node(capsys, battery_runs):
    worst = {}
    for name in ("one_jump", "three_jump"):
        lhs, rhs = E.bv_energy_profile(battery_runs[name][1])
        worst[name] = float((rhs - lhs).min())
    ok = all(w >= -SLACK_FACTOR * DT for w in worst.values())
    _report(capsys, "C05", ok, f"min nodal slack {worst}")


def test_c06_continuity_across_jump(capsys):
    prob = step_scalar()
    Ks = (100, 200, 400, 800, 1600)
    mods, jump_cells = [], []
    for K in Ks:
        tr = prob.solve(K)
        mods.append(modulus_of_continuity_V(tr))
        k = int(np.searchsorted(tr.times, 0.5)) - 1  # cell ending at the jump
        inc = tr.space.norms_V(np.diff(tr.states[k:k + 2 + 1], axis=0))
        jump_cells.append(float(inc.max()))
    ratios = [a / b for a, b in zip(mods, mods[1:])]
    jratios = [a / b for a, b in zip(jump_cells, jump_cells[1:])]
    ok = min(ratios) >= CONT_RATIO and min(jratios) >= CONT_RATIO
    _report(capsys, "C06", ok, f"ratios={np.round(ratios, 3).tolist()} jump-cell ratios={np.round(jratios, 3).tolist()}")


def test_c07_mollification_pipeline(capsys):
    prob = step_scalar()
    orders = (4, 8, 16, 32)
    rows = E.mollification_convergence_study(prob.form, None, prob.u0, orders, 2000)
    err = [r["err_l2v"] for r in rows]
    bound = [r["drift_bound"] for r in rows]
    mono = all(b <= a for a, b in zip(err, err[1:])) and all(b <= a for a, b in zip(bound, bound[1:]))
    ts = np.linspace(0.0, 1.0, 401)
    gaps = []
    for n in orders:
        fn = mollify_form(prob.form, Mollifier(n))
        M_hat, a_hat = probe_constants(fn, ts)
        gaps.append(max(abs(M_hat - prob.form.M), abs(a_hat - prob.form.alpha)))
    ok = mono and max(gaps) <= PROBE_TOL
    _report(capsys, "C07", ok, f"err={np.array(err).round(6).tolist()} bound={np.array(bound).round(4).tolist()} "
                               f"max probe gap={max(gaps):.1e}")


def test_c08_perturbation(capsys):
    prob = perturbed_scalar()
    tr = prob.solve(800)
    err = abs(tr.final[0] - math.exp(-2.0))
    rep = E.perturbed_mr_bound_check(tr)
    consts = E.perturbation_constants(PerturbationSpec(B=1.0, h=0.0, beta0=1.0, beta1=1.0), T=1.0)
    ok = err <= FINAL_TOL and rep.passed and consts == (2.0, 0.5, 0.0)
    _report(capsys, "C08", ok, f"u(1)={tr.final[0]:.6f} err={err:.2e} C_pert slack={rep.slack:.3g} (b,delta,nu)={consts}")


def test_c09_quasilinear(capsys):
    spec = QuasilinearSpec(M_FUNCTIONS["saturating"], F_FUNCTIONS["zero"], beta0=1.0, beta1=2.0)
    form = build_scalar(1.0)
    K = 800
    rep = solve_fixed_point(spec, form, K, [1.0], tol=1e-8, max_iter=MAX_PICARD, theta=0.5)
    sol = solve_ivp(lambda t, u: -(1.0 + u**2 / (1.0 + u**2)) * u, (0.0, 1.0), [1.0], method="Radau",
                    rtol=1e-12, atol=1e-14, dense_output=True)
    err = float(np.abs(rep.trajectory.states[:, 0] - sol.sol(rep.trajectory.times)[0]).max())
    bound = apriori_bound_check(rep, spec, form, [1.0])
    # the witness runs are not bound by the iteration cap; at lambda = 0 only damping contracts
    rows = homotopy_witness(spec, form, K, [1.0], tol=1e-8, max_iter=100, theta=0.5)
    ok = (rep.converged and rep.iterations <= MAX_PICARD and err <= 10.0 / K
          and bound.metadata["both_pass"] and all(r["bounded"] and r["converged"] for r in rows))
    _report(capsys, "C09", ok, f"iterations={rep.iterations} oracle err={err:.2e} apriori slack={bound.slack:.3g} "
                               f"homotopy bounded={[r['bounded'] for r in rows]}")


def test_c10_energy_identity_order(capsys):
    prob = lipschitz_scalar()
    res = [E.energy_identity_residual(prob.solve(K)) for K in (100, 200, 400, 800, 1600)]
    orders = [math.log2(a / b) for a, b in zip(res, res[1:])]
    _report(capsys, "C10", min(orders) >= ENERGY_ORDER, f"residuals={np.array(res).round(6).tolist()} "
                                                        f"orders={np.round(orders, 3).tolist()}")
