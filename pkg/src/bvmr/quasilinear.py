"""Damped Picard iteration for ``u' + m(t, x, u, u_x) A u = f(t, x, u, u_x)``.

The frozen map ``S(v)`` solves the linear problem with ``m`` and ``f``
evaluated on a given trajectory ``v``: the multiplier enters as a nodal
coefficient of the H representative of ``A u`` and the source as cell
samples.  On cell ``(t_k, t_{k+1}]`` both use the state ``v_{k+1}``, so a
fixed point of ``S`` is a fully implicit discretisation.

Existence of a fixed point does not give uniqueness or contraction; a
Picard run that stalls is reported with its last two iterates rather than
forced to converge.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimates import TOL_FACTOR, EstimateReport, _tol
from .stepper import (PerturbationSpec, SolverError, SourceTerm, Trajectory, mr_norms, prepare_grid,
                      solve_perturbed)


class FixedPointError(RuntimeError):
    """An iterate became non-finite."""


def _as_time_fn(value):
    if value is None:
        return lambda t: 0.0
    if callable(value):
        return value
    c = float(value)
    return lambda t: c


@dataclass
class QuasilinearSpec:
    """Nonlinear coefficients and their growth data.

    Parameters
    ----------
    m : callable
        ``m(t, x, u, u_x)`` with values in ``[beta0, beta1]``; arrays in, array out.
    f_nl : callable
        ``f_nl(t, x, u, u_x)``.
    beta0, beta1 : float
        Range of ``m``, ``0 < beta0 <= beta1``.
    g_src : float or callable, optional
        ``g(t, x)`` with ``|f_nl|^2 <= g^2 + h(t) (u^2 + u_x^2)``; a number is
        a constant function.
    h : float or callable, optional
        ``h(t) >= 0``.
    q : float, optional
        Integrability exponent of ``h``; when given the fixed-point norm is
        ``L^p(0, T; V)`` with ``2/p = 1 - 1/q``.
    """

    m: object
    f_nl: object
    beta0: float
    beta1: float
    g_src: object = 0.0
    h: object = 0.0
    q: float = None

    def __post_init__(self):
        if not 0 < self.beta0 <= self.beta1:
            raise ValueError("need 0 < beta0 <= beta1")
        if self.q is not None and not self.q > 1:
            raise ValueError("q must exceed 1")

    @property
    def p(self):
        return None if self.q is None else 2.0 * self.q / (self.q - 1.0)

    def g_value(self, t, x):
        g = self.g_src
        if callable(g):
            return np.broadcast_to(np.asarray(g(t, x), dtype=float), np.shape(x))
        return np.full(np.shape(x), float(g))

    def h_value(self, t):
        return float(_as_time_fn(self.h)(t))

    def check_growth(self, samples=500, seed=0, T=1.0, spread=5.0):
        """Largest violation of the growth bound on random ``(t, x, u, u_x)``."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, T, samples)
        x = rng.uniform(0.0, 1.0, samples)
        u = rng.uniform(-spread, spread, samples)
        ux = rng.uniform(-spread, spread, samples)
        worst = -math.inf
        for ti, xi, ui, di in zip(t, x, u, ux):
            lhs = float(np.asarray(self.f_nl(ti, np.array([xi]), np.array([ui]), np.array([di]))).ravel()[0]) ** 2
            rhs = float(self.g_value(ti, np.array([xi]))[0]) ** 2 + self.h_value(ti) * (ui**2 + di**2)
            worst = max(worst, lhs - rhs)
        return worst


def _nodal(form, states):
    """Coordinates ``x`` and nodal gradients for each state row."""
    mesh = form.mesh
    if mesh is None:
        x = np.zeros(form.dim)
        return x, np.zeros_like(states)
    grads = np.array([mesh.nodal_gradient(s) for s in states])
    return mesh.dof_coordinates(), grads


class _CellLookup:
    """Piecewise-constant lookup: ``t`` in ``(t_k, t_{k+1}]`` maps to row ``k``."""

    def __init__(self, times, rows):
        self.times, self.rows = times, rows

    def __call__(self, t, side="left"):
        k = int(np.searchsorted(self.times, t, side="left")) - 1
        return self.rows[min(max(k, 0), len(self.rows) - 1)]


def frozen_coefficients(spec, form, grid, v):
    """Cell values of ``m`` and ``f_nl`` on the trajectory ``v``."""
    states = v.states if isinstance(v, Trajectory) else np.asarray(v)
    x, grads = _nodal(form, states)
    n = form.dim
    m_rows, f_rows = [], []
    for k in range(grid.K):
        t = grid.times[k + 1]
        u, ux = states[k + 1], grads[k + 1]
        mv = np.broadcast_to(np.asarray(spec.m(t, x, u, ux), dtype=float), (n,))
        if mv.min() < spec.beta0 - 1e-14 or mv.max() > spec.beta1 + 1e-14:
            raise ValueError(f"m leaves [{spec.beta0}, {spec.beta1}] on cell {k}: "
                             f"range [{mv.min():.6g}, {mv.max():.6g}]")
        m_rows.append(np.array(mv))
        f_rows.append(np.broadcast_to(np.asarray(spec.f_nl(t, x, u, ux), dtype=float), (n,)).copy())
    return np.array(m_rows), np.array(f_rows)


def frozen_solve(spec, form, grid, v, u0):
    """``u_v = S(v)``: the linear solve with ``m`` and ``f_nl`` frozen at ``v``."""
    m_rows, f_rows = frozen_coefficients(spec, form, grid, v)
    pert = PerturbationSpec(B=_CellLookup(grid.times, m_rows), beta0=spec.beta0, beta1=spec.beta1)
    src = SourceTerm.from_samples(grid.times[:-1], f_rows, "piecewise_constant")
    return solve_perturbed(form, pert, grid, src, u0)


def _time_norm(traj_like, space, dt, p):
    vals = space.norms_V(traj_like[1:])
    if p is None:
        return float(np.sqrt(np.sum(dt * vals**2)))
    return float(np.sum(dt * vals**p) ** (1.0 / p))


@dataclass
class FixedPointReport:
    iterations: int
    converged: bool
    increment: float
    residual: float
    trajectory: Trajectory
    history: list = field(default_factory=list)
    theta: float = 0.5
    tol: float = 1e-8
    lam: float = 1.0
    norm: str = "L2(0,T;V)"
    candidates: tuple = ()

    def to_dict(self):
        out = {"iterations": self.iterations, "converged": self.converged, "increment": self.increment,
               "residual_l2h": self.residual, "history": list(self.history), "theta": self.theta,
               "tol": self.tol, "lambda": self.lam, "norm": self.norm,
               "final_state": np.asarray(self.trajectory.final).real.tolist()}
        if self.candidates:
            out["candidate_final_states"] = [np.asarray(c[-1]).real.tolist() for c in self.candidates]
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def fixed_point_residual(spec, form, traj):
    """``|u' + m(u) A u - f(u)|_{L2 H}`` of a trajectory, cellwise implicit."""
    grid = traj.grid
    space = form.space
    m_rows, f_rows = frozen_coefficients(spec, form, grid, traj.states)
    z = np.array([space.solve_H(traj.cell_matrix(k) @ traj.states[k + 1]) for k in range(grid.K)])
    r = traj.derivative() + m_rows * z - f_rows
    return float(np.sqrt(np.sum(grid.steps * space.norms_H(r) ** 2)))


def solve_fixed_point(spec, form, grid, u0, tol=1e-8, max_iter=50, theta=0.5, lam=1.0):
    """Iterate ``v <- (1 - theta) v + theta lam S(v)`` from the constant path ``u0``.

    Stops when ``|lam S(v) - v| <= tol max(1, |v|)`` in ``L2(0,T;V)`` (or
    ``L^p(0,T;V)`` when ``spec.q`` is set).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if not 0 < theta <= 1:
        raise ValueError("damping theta must lie in (0, 1]")
    u0 = np.asarray(u0, dtype=float)
    # fix the grid once so every frozen solve uses the same nodes
    grid = prepare_grid(form, grid)
    space, dt, p = form.space, grid.steps, spec.p
    v = np.tile(u0, (grid.K + 1, 1))
    history = []
    Sv = None
    for j in range(1, max_iter + 1):
        try:
            Sv = frozen_solve(spec, form, grid, v, u0)
        except SolverError as exc:
            raise FixedPointError(f"iteration {j}: {exc}") from exc
        target = lam * Sv.states
        if not np.all(np.isfinite(target)):
            raise FixedPointError(f"iteration {j}: non-finite iterate")
        inc = _time_norm(target - v, space, dt, p)
        history.append(inc)
        if inc <= tol * max(1.0, _time_norm(v, space, dt, p)):
            traj = _scaled(Sv, lam)
            res = fixed_point_residual(spec, form, traj) if lam == 1.0 else math.nan
            return FixedPointReport(j, True, inc, res, traj, history, theta, tol, lam, _norm_name(p))
        prev = v
        v = (1.0 - theta) * v + theta * target
    traj = _scaled(Sv, lam)
    res = fixed_point_residual(spec, form, traj) if lam == 1.0 else math.nan
    return FixedPointReport(max_iter, False, history[-1], res, traj, history, theta, tol, lam, _norm_name(p),
                            candidates=(prev, lam * Sv.states))


def _norm_name(p):
    return "L2(0,T;V)" if p is None else f"L{p:g}(0,T;V)"


def _scaled(traj, lam):
    if lam == 1.0:
        return traj
    return Trajectory(traj.form, traj.grid, lam * traj.states, lam * traj.sources, lam * traj.actions,
                      traj.scheme, traj.perturbation)


def _apriori_parts(spec, form, grid, u0):
    space = form.space
    kappa = max(1.0, 1.0 / spec.beta0)
    x = form.mesh.dof_coordinates() if form.mesh is not None else np.zeros(form.dim)
    g_sq = float(sum(dt * space.norm_H(spec.g_value(t, x)) ** 2 for t, dt in zip(grid.midpoints, grid.steps)))
    h_l1 = float(sum(dt * spec.h_value(t) for t, dt in zip(grid.midpoints, grid.steps)))
    c = form.M * space.norm_V(u0) ** 2 + kappa * g_sq
    mass = form.modulus.total_variation() + kappa * h_l1
    xr = mass / form.alpha
    return {"c": c, "mass": mass, "kappa": kappa, "g_src_l2h_sq": g_sq, "h_l1": h_l1,
            "sup_rhs": c * math.exp(xr), "au_rhs": c * (1.0 + xr * math.exp(xr))}


def apriori_bound_check(report, spec, form, u0, tol_factor=TOL_FACTOR):
    """Gronwall bounds ``alpha sup |u|_V^2`` and ``beta0 |A u|_{L2 H}^2`` for a fixed point.

    Both are checked; the report carries the one with the smaller slack.
    With ``kappa = max(1, 1/beta0)``, ``c = M |u0|_V^2 + kappa |g|^2`` and
    ``x = (gvar + kappa |h|_{L1}) / alpha`` the bounds are ``c e^x`` and
    ``c (1 + x e^x)``.
    """
    traj = report.trajectory
    parts = _apriori_parts(spec, form, traj.grid, np.asarray(u0))
    n = mr_norms(traj)
    sup_lhs = form.alpha * n.u_supv**2
    au_lhs = spec.beta0 * n.au_l2h**2
    tol = _tol(traj, max(1.0, parts["c"]), tol_factor)
    sup_slack = parts["sup_rhs"] - sup_lhs
    au_slack = parts["au_rhs"] - au_lhs
    both = bool(sup_slack >= -tol and au_slack >= -tol)
    meta = {**parts, "sup_lhs": sup_lhs, "au_lhs": au_lhs, "sup_slack": sup_slack, "au_slack": au_slack,
            "converged": report.converged, "both_pass": both, "K": traj.grid.K, "dt_max": traj.grid.dt_max}
    if sup_slack <= au_slack:
        return EstimateReport("apriori_sup_v", sup_lhs, parts["sup_rhs"], tol, meta)
    return EstimateReport("apriori_au", au_lhs, parts["au_rhs"], tol, meta)


def homotopy_witness(spec, form, grid, u0, lambdas=(0.0, 0.25, 0.5, 0.75, 1.0), **kwargs):
    """Solve ``u = lam S(u)`` for each ``lam`` and compare with the a priori bounds."""
    rows = []
    for lam in lambdas:
        rep = solve_fixed_point(spec, form, grid, u0, lam=lam, **kwargs)
        parts = _apriori_parts(spec, form, rep.trajectory.grid, np.asarray(u0))
        n = mr_norms(rep.trajectory)
        sup_lhs = form.alpha * n.u_supv**2
        au_lhs = spec.beta0 * n.au_l2h**2
        tol = _tol(rep.trajectory, max(1.0, parts["c"]), TOL_FACTOR)
        rows.append({"lambda": lam, "converged": rep.converged, "iterations": rep.iterations,
                     "sup_lhs": sup_lhs, "sup_rhs": parts["sup_rhs"], "au_lhs": au_lhs,
                     "au_rhs": parts["au_rhs"], "mr_norm_sq": n.mr_norm_sq,
                     "bounded": bool(sup_lhs <= parts["sup_rhs"] + tol and au_lhs <= parts["au_rhs"] + tol)})
    return rows


# named nonlinearities for configuration files
M_FUNCTIONS = {
    "one": lambda t, x, u, ux: np.ones_like(u),
    "saturating": lambda t, x, u, ux: 1.0 + u**2 / (1.0 + u**2),
    "one_plus_u2_capped": lambda t, x, u, ux: np.minimum(1.0 + u**2, 2.0),
}
F_FUNCTIONS = {
    "zero": lambda t, x, u, ux: np.zeros_like(u),
    "sin": lambda t, x, u, ux: np.sin(u),
    "one": lambda t, x, u, ux: np.ones_like(u),
}
