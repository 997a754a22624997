"""Numerical checks of the energy identities and regularity bounds.

Every check returns an :class:`EstimateReport` with ``lhs``, ``rhs`` and a
tolerance that scales with the time step,
``tol = tol_factor * dt_max * max(1, scale)``, where ``scale`` is the size
of the data ``M |u0|_V^2 + |f|^2``.

Discrete conventions (shared with :mod:`bvmr.stepper`): the cell
``(t_k, t_{k+1}]`` uses ``S_k = S(t_{k+1}-)``, derivatives are backward
differences, time integrals are right-end-point sums and the Stieltjes
mass of cell ``k`` is ``mu_g([t_k, t_{k+1})) = g(t_{k+1}-) - g(t_k-)``.
With these choices the Lions bound, the bound with the explicit constant,
the sup-V bound, the energy inequality with one-sided limits and the
interpolation inequality hold for the discrete trajectory itself, so the
tolerance only absorbs rounding.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .forms import mollify_form
from .bv_time import Mollifier
from .stepper import SourceTerm, mr_norms, solve_linear, lp_time_norm

TOL_FACTOR = 10.0
EXACT_RTOL = 1e-10


@dataclass
class EstimateReport:
    """Outcome of one inequality check; ``passed`` iff ``slack >= -tolerance``."""

    name: str
    lhs: float
    rhs: float
    tolerance: float
    metadata: dict = field(default_factory=dict)

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def passed(self):
        return bool(self.slack >= -self.tolerance)

    def to_dict(self):
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
                "tolerance": self.tolerance, "pass": self.passed, "metadata": _plain(self.metadata)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: lhs={self.lhs:.6g} rhs={self.rhs:.6g} slack={self.slack:.3g} tol={self.tolerance:.1e}"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# ---------------------------------------------------------------------------
# data norms
# ---------------------------------------------------------------------------

def _sources(traj, f):
    if f is None:
        return traj.sources
    if not isinstance(f, SourceTerm):
        f = SourceTerm.constant(f) if not callable(f) else SourceTerm.from_function(f, traj.space.dim)
    return f.cell_samples(traj.grid)


def _data(traj, f=None, u0=None):
    space = traj.space
    src = _sources(traj, f)
    u0 = traj.states[0] if u0 is None else np.asarray(u0)
    dt = traj.grid.steps
    f_h = float(np.sum(dt * space.norms_H(src) ** 2))
    f_vp = float(np.sum(dt * space.dual_norms_Vprime(src @ space.gram_H.T) ** 2))
    return {"f_l2h_sq": f_h, "f_l2vprime_sq": f_vp, "u0_H_sq": space.norm_H(u0) ** 2,
            "u0_V_sq": space.norm_V(u0) ** 2}


def problem_scale(traj, f=None, u0=None):
    d = _data(traj, f, u0)
    return max(1.0, traj.form.M * d["u0_V_sq"] + d["f_l2h_sq"])


def _tol(traj, scale, tol_factor):
    return tol_factor * traj.grid.dt_max * max(1.0, scale)


def _meta(traj, **extra):
    return {"K": traj.grid.K, "dt_max": traj.grid.dt_max, "inserted_times": list(traj.grid.inserted),
            "alpha": traj.form.alpha, "M": traj.form.M, **extra}


def _effective_alpha(traj):
    """Coercivity of the operator actually stepped, probed cell by cell for perturbed runs."""
    pert = traj.perturbation
    if pert is None:
        return traj.form.alpha, "declared"
    space = traj.space
    worst = math.inf
    for k in range(traj.grid.K):
        t1 = traj.times[k + 1]
        W = space.v_geometry(pert.scheme_matrix(space, traj.cell_matrix(k), t1, "left"))
        worst = min(worst, float(np.linalg.eigvalsh(0.5 * (W + W.conj().T))[0]))
    return worst, "probed"


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def explicit_constant_C(alpha, gvar):
    """``1 + (gvar/alpha) exp(gvar/alpha)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if gvar < 0:
        raise ValueError("the variation of g must be nonnegative")
    x = gvar / alpha
    return 1.0 + x * math.exp(x)


def gronwall_bound(c0, total_mass, alpha):
    """``c0 exp(total_mass / alpha)``."""
    if c0 < 0 or total_mass < 0 or not alpha > 0:
        raise ValueError("gronwall_bound needs c0 >= 0, total_mass >= 0, alpha > 0")
    return c0 * math.exp(total_mass / alpha)


def perturbation_constants(pert, T=1.0):
    """Return ``(b, delta, nu_total)`` for ``u' + B A u + C u = f``.

    From ``Re(B A u + C u | A u) >= beta0 |A u|^2 - |C u| |A u|`` and Young,
    ``>= (beta0/2) |A u|^2 - h(t) |u|_V^2 / (2 beta0)``; hence
    ``delta = min(1, beta0/2)`` and ``nu = |h|_{L1} / (2 beta0)``.  The
    lower-order operator ``(B - 1) A + C`` is bounded on the W space by
    ``b = (beta1 + 1) + |h|_{L1}^{1/2}``.
    """
    beta0, beta1 = float(pert.beta0), float(pert.beta1)
    if not beta0 > 0:
        raise ValueError("beta0 must be positive")
    h1 = pert.h_l1(T)
    delta = min(1.0, beta0 / 2.0)
    nu = h1 / (2.0 * beta0)
    b = (beta1 + 1.0) + math.sqrt(h1)
    return b, delta, nu


def perturbed_constant(alpha, M, gvar, b, delta, nu):
    """Constant ``C_pert`` with ``|u|_MR^2 <= C_pert (|f|^2 + |u0|_V^2)``.

    Chain: ``c2 = exp((gvar + nu)/alpha)/alpha``, ``c3 = 1 + c2 (gvar + nu)``,
    ``|A u|^2 <= (c3/delta) (|f|^2/delta + M |u0|^2)``,
    ``sup |u|_V^2 <= c2 (|f|^2/(2 delta) + M |u0|^2)`` and
    ``|u'| <= |f| + (1 + b) |A u| + b sup |u|_V``.
    """
    mass = gvar + nu
    c2 = math.exp(mass / alpha) / alpha
    c3 = 1.0 + c2 * mass
    A = c3 / delta * max(1.0 / delta, M)
    sup = c2 * max(1.0 / (2.0 * delta), M)
    du = 1.0 + (1.0 + b) * math.sqrt(A) + b * math.sqrt(sup)
    return {"c2": c2, "c3": c3, "au_factor": A, "supv_factor": sup, "du_factor": du,
            "C_pert": A + du**2}


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def lions_check(traj, f=None, u0=None, tol_factor=TOL_FACTOR):
    """``|u|_{L2 V}^2 <= |f|_{L2 V'}^2 / alpha^2 + |u0|_H^2 / alpha``.

    The metadata also carries the reading with an unsquared ``|f|``.
    """
    d = _data(traj, f, u0)
    alpha, source = _effective_alpha(traj)
    lhs = mr_norms(traj).u_l2v ** 2
    if not alpha > 0:
        return EstimateReport("lions", lhs, -math.inf, 0.0, _meta(traj, reason="operator not coercive"))
    rhs = d["f_l2vprime_sq"] / alpha**2 + d["u0_H_sq"] / alpha
    rhs_unsq = math.sqrt(d["f_l2vprime_sq"]) / alpha**2 + d["u0_H_sq"] / alpha
    return EstimateReport("lions", lhs, rhs, _tol(traj, problem_scale(traj, f, u0), tol_factor),
                          _meta(traj, alpha_used=alpha, alpha_source=source, rhs_unsquared_f=rhs_unsq,
                                pass_unsquared_f=bool(lhs <= rhs_unsq), **d))


def energy_identity_residual(traj):
    """Largest per-cell defect of ``d/dt a(t,u,u) = 2 Re(A u | u')_H + a'(t,u,u)``, divided by ``dt``.

    ``a'`` is the centred difference of the coefficients over the cell.
    """
    form = traj.form
    if form.lipschitz is None:
        raise ValueError("the energy identity needs a form that is Lipschitz in time")
    worst = 0.0
    for k in range(traj.grid.K):
        dt = traj.grid.steps[k]
        u0, u1 = traj.states[k], traj.states[k + 1]
        S0, S1 = form.assemble(traj.times[k]), form.assemble(traj.times[k + 1])
        a1 = np.vdot(u1, S1 @ u1).real
        a0 = np.vdot(u0, S0 @ u0).real
        cross = 2.0 * np.vdot(u1 - u0, S1 @ u1).real
        da = np.vdot(u1, (S1 - S0) @ u1).real
        worst = max(worst, abs(a1 - a0 - cross - da) / dt)
    return float(worst)


def bv_energy_profile(traj, modulus=None):
    """Arrays ``(lhs, rhs)`` of the one-sided energy inequality at every node."""
    form = traj.form
    g = form.modulus if modulus is None else modulus
    t = traj.times
    states = traj.states
    K = traj.grid.K
    a_left = np.empty(K + 1)
    a_left[0] = np.vdot(states[0], form.assemble(0.0, "right") @ states[0]).real
    cross = np.empty(K)
    for k in range(K):
        S = traj.cell_matrix(k)
        u1 = states[k + 1]
        a_left[k + 1] = np.vdot(u1, S @ u1).real
        cross[k] = 2.0 * np.vdot(u1 - states[k], traj.actions[k]).real
    g_left = np.array([g.eval(s, "left") for s in t])
    mass = np.diff(g_left)
    work = mass * traj.space.norms_V(states[:-1]) ** 2
    lhs = a_left - a_left[0]
    rhs = np.concatenate(([0.0], np.cumsum(cross + work)))
    return lhs, rhs


def bv_energy_inequality_check(traj, t_index=None, tol_factor=TOL_FACTOR, modulus=None):
    """``a(t-, u, u) - a(0+, u0, u0) <= int 2 Re(A u | u') + int |u|_V^2 d mu_g``.

    With ``t_index=None`` the node after ``t = 0`` with the smallest slack is
    reported (at ``t = 0`` both sides vanish).
    """
    lhs, rhs = bv_energy_profile(traj, modulus)
    slack = rhs - lhs
    k = int(np.argmin(slack[1:])) + 1 if t_index is None else int(t_index)
    if not 0 <= k <= traj.grid.K:
        raise ValueError(f"t_index {k} outside 0..{traj.grid.K}")
    return EstimateReport("bv_energy", float(lhs[k]), float(rhs[k]),
                          _tol(traj, problem_scale(traj), tol_factor),
                          _meta(traj, t_index=k, t=float(traj.times[k]), min_slack_all_nodes=float(slack.min())))


def mr_bound_check(traj, f=None, u0=None, tol_factor=TOL_FACTOR, gvar=None):
    """``|u'|^2 + |A u|^2 <= C(alpha, gvar) (|f|_{L2 H}^2 + M |u0|_V^2)``."""
    d = _data(traj, f, u0)
    form = traj.form
    gvar = form.modulus.total_variation() if gvar is None else float(gvar)
    C = explicit_constant_C(form.alpha, gvar)
    lhs = mr_norms(traj).mr_norm_sq
    rhs = C * (d["f_l2h_sq"] + form.M * d["u0_V_sq"])
    return EstimateReport("mr_bound", lhs, rhs, _tol(traj, problem_scale(traj, f, u0), tol_factor),
                          _meta(traj, C=C, gvar=gvar, **d))


def sup_v_bound_check(traj, f=None, u0=None, tol_factor=TOL_FACTOR):
    """``alpha sup |u|_V^2 <= (|f|^2 + M |u0|_V^2) exp(gvar/alpha)``.

    The metadata records the variant with ``sup |u|_V^2 / alpha`` on the
    left, which is not implied by the energy argument when ``alpha < 1``.
    """
    d = _data(traj, f, u0)
    form = traj.form
    gvar = form.modulus.total_variation()
    sup = mr_norms(traj).u_supv
    rhs = gronwall_bound(d["f_l2h_sq"] + form.M * d["u0_V_sq"], gvar, form.alpha)
    lhs = form.alpha * sup**2
    alt = sup**2 / form.alpha
    return EstimateReport("sup_v", lhs, rhs, _tol(traj, problem_scale(traj, f, u0), tol_factor),
                          _meta(traj, gvar=gvar, sup_v=sup, lhs_divided_by_alpha=alt,
                                pass_divided_by_alpha=bool(alt <= rhs), **d))


def perturbed_mr_bound_check(traj, f=None, u0=None, pert=None, tol_factor=TOL_FACTOR):
    """``|u|_MR^2 <= C_pert (|f|_{L2 H}^2 + |u0|_V^2)`` for ``u' + B A u + C u = f``."""
    pert = traj.perturbation if pert is None else pert
    if pert is None:
        raise ValueError("perturbed_mr_bound_check needs the perturbation data")
    form = traj.form
    d = _data(traj, f, u0)
    b, delta, nu = perturbation_constants(pert, form.T)
    gvar = form.modulus.total_variation()
    chain = perturbed_constant(form.alpha, form.M, gvar, b, delta, nu)
    lhs = mr_norms(traj).mr_norm_sq
    rhs = chain["C_pert"] * (d["f_l2h_sq"] + d["u0_V_sq"])
    return EstimateReport("perturbed_mr_bound", lhs, rhs, _tol(traj, problem_scale(traj, f, u0), tol_factor),
                          _meta(traj, b=b, delta=delta, nu=nu, gvar=gvar, **chain, **d))


def interpolation_check(traj):
    """``alpha |u|_{L2 V}^2 <= |A u|_{L2 H} |u|_{L2 H}``; exact node by node."""
    n = mr_norms(traj)
    lhs = traj.form.alpha * n.u_l2v**2
    rhs = n.au_l2h * n.u_l2h
    return EstimateReport("interpolation", lhs, rhs, EXACT_RTOL * max(1.0, abs(rhs)),
                          _meta(traj, au_l2h=n.au_l2h, u_l2h=n.u_l2h, u_l2v=n.u_l2v))


def embedding_check(traj, p=4.0):
    """``|u|_{L2 H} <= c_H |u|_{L2 V}`` and ``|u|_{Lp V} <= T^{1/p} sup |u|_V``."""
    n = mr_norms(traj)
    cH = traj.space.embedding_constant()
    lp = lp_time_norm(traj, p, "V")
    lhs = max(n.u_l2h - cH * n.u_l2v, lp - traj.grid.T ** (1.0 / p) * n.u_supv)
    return EstimateReport("embedding", lhs, 0.0, EXACT_RTOL * max(1.0, n.u_supv),
                          _meta(traj, c_H=cH, p=p, lp_norm=lp, u_l2h=n.u_l2h, u_l2v=n.u_l2v))


def run_checks(traj, names, tol_factor=TOL_FACTOR):
    """Run the named checks and return their reports."""
    table = {
        "lions": lambda: lions_check(traj, tol_factor=tol_factor),
        "bv_energy": lambda: bv_energy_inequality_check(traj, tol_factor=tol_factor),
        "mr_bound": lambda: mr_bound_check(traj, tol_factor=tol_factor),
        "sup_v": lambda: sup_v_bound_check(traj, tol_factor=tol_factor),
        "interpolation": lambda: interpolation_check(traj),
        "embedding": lambda: embedding_check(traj),
        "perturbed_mr_bound": lambda: perturbed_mr_bound_check(traj, tol_factor=tol_factor),
    }
    unknown = [n for n in names if n not in table]
    if unknown:
        raise ValueError(f"unknown checks {unknown}; available: {sorted(table)}")
    return [table[n]() for n in names]


CHECK_NAMES = ("lions", "bv_energy", "mr_bound", "sup_v", "interpolation", "embedding", "perturbed_mr_bound")


# ---------------------------------------------------------------------------
# mollification study
# ---------------------------------------------------------------------------

def mollification_convergence_study(form, f, u0, orders, grid):
    """Compare solves with mollified coefficients against the direct solve.

    Returns one row per order ``n`` with ``err_l2v`` (``|u_n - u|_{L2 V}``),
    ``dual_drift`` (``|(A_n - A) u_n|_{L2 V'}``) and ``drift_bound``
    (``|g(.+1/n) - g(.-1/n)|_{L2} sup |u_n|_V``).
    """
    orders = list(orders)
    if not orders:
        raise ValueError("at least one mollifier order is required")
    ref = solve_linear(form, grid, f, u0)
    grid = ref.grid
    space = form.space
    dt = grid.steps
    rows = []
    for n in orders:
        moll = n if isinstance(n, Mollifier) else Mollifier(int(n))
        if grid.dt_max > moll.radius:
            raise ValueError(f"grid too coarse for n={moll.order}: dt_max={grid.dt_max:.3g} > 1/n")
        fn = mollify_form(form, moll)
        un = solve_linear(fn, grid, f, u0)
        diff = space.norms_V(un.states[1:] - ref.states[1:])
        drift = np.array([space.dual_norm_Vprime((fn.assemble(grid.times[k + 1]) - ref.cell_matrix(k)) @ un.states[k + 1])
                          for k in range(grid.K)])
        sup = float(un.norms_V().max())
        bound = form.modulus.shift_difference_l2(moll.radius) * sup
        rows.append({"n": moll.order, "err_l2v": float(np.sqrt(np.sum(dt * diff**2))),
                     "dual_drift": float(np.sqrt(np.sum(dt * drift**2))),
                     "drift_bound": float(bound), "sup_v": sup, "dt_max": grid.dt_max})
    return rows


def study_to_csv(rows, path):
    if not rows:
        raise ValueError("empty table")
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(keys)
        for r in rows:
            writer.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])
