"""Time stepping for ``u' + A(t) u = f``, ``u(0) = u0`` on a Gelfand triple.

Implicit Euler on a cell ``(t_k, t_{k+1}]`` reads

    (gram_H + dt S_k) u_{k+1} = gram_H u_k + dt gram_H f_k

with ``S_k = S(t_{k+1}-)``, the value of the coefficients inside the cell.
Every jump time of the form is inserted into the grid, so ``S_k`` is the
exact restriction of ``S`` to the open cell and the step is well defined
for any bounded-variation form.  ``f_k`` is the source at the cell
midpoint.

Crank-Nicolson averages the end-point operators and is only offered for
forms that are Lipschitz in time.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from .bv_time import PiecewiseAffine
from ._validation import as_vector, is_hermitian

SCHEMES = ("implicit_euler", "crank_nicolson")


class SolverError(RuntimeError):
    """A time step could not be carried out."""


class TimeGrid:
    """Strictly increasing grid ``0 = t_0 < ... < t_K = T``.

    ``inserted`` lists the times that were added to a uniform grid so that
    every jump of the coefficients is a grid point.
    """

    def __init__(self, times, inserted=()):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("a grid needs at least two points")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("grid times must start at 0 and increase strictly")
        self.times = times
        self.inserted = tuple(float(t) for t in inserted)

    @classmethod
    def uniform(cls, T, K, jump_times=()):
        if int(K) != K or K < 1:
            raise ValueError(f"number of steps must be a positive integer, got {K}")
        base = np.linspace(0.0, T, int(K) + 1)
        tol = 1e-12 * T
        extra = [float(t) for t in jump_times
                 if 0.0 < t < T and np.min(np.abs(base - t)) > tol]
        if not extra:
            return cls(base)
        # jumps within rounding of a uniform node are already grid points
        times = np.sort(np.concatenate((base, extra)))
        return cls(times, inserted=sorted(extra))

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def K(self):
        return self.times.size - 1

    @property
    def steps(self):
        return np.diff(self.times)

    @property
    def dt_max(self):
        return float(self.steps.max())

    @property
    def midpoints(self):
        return 0.5 * (self.times[:-1] + self.times[1:])

    def __repr__(self):
        return f"TimeGrid(K={self.K}, T={self.T}, inserted={list(self.inserted)})"


class SourceTerm:
    """H-valued source ``f(t)`` given by its coefficient vectors.

    Use one of the constructors; ``f(t)`` returns a vector of length ``dim``.
    """

    def __init__(self, fn, dim, description="function"):
        self._fn = fn
        self.dim = int(dim)
        self.description = description

    def __call__(self, t):
        return as_vector(self._fn(float(t)), self.dim, name="source value")

    @classmethod
    def zero(cls, dim):
        return cls(lambda t: np.zeros(dim), dim, "zero")

    @classmethod
    def constant(cls, value):
        v = as_vector(value)
        return cls(lambda t: v, v.size, "constant")

    @classmethod
    def from_function(cls, fn, dim):
        return cls(fn, dim, "function")

    @classmethod
    def from_samples(cls, times, values, kind="piecewise_constant"):
        """Source from samples; ``piecewise_constant`` holds ``values[j]`` on ``[t_j, t_{j+1})``."""
        times = np.asarray(times, dtype=float)
        values = np.atleast_2d(np.asarray(values))
        if values.shape[0] != times.size:
            values = values.T
        if values.shape[0] != times.size or np.any(np.diff(times) <= 0):
            raise ValueError("samples need one row per strictly increasing time")
        if kind == "piecewise_constant":
            def fn(t):
                j = int(np.searchsorted(times, t, side="right")) - 1
                return values[min(max(j, 0), times.size - 1)]
        elif kind == "linear":
            def fn(t):
                return np.array([np.interp(t, times, col) for col in values.T])
        else:
            raise ValueError(f"unknown interpolation kind {kind!r}")
        return cls(fn, values.shape[1], f"samples/{kind}")

    def cell_samples(self, grid):
        return np.array([self(t) for t in grid.midpoints])


def _as_source(f, dim):
    if f is None:
        return SourceTerm.zero(dim)
    if isinstance(f, SourceTerm):
        if f.dim != dim:
            raise ValueError(f"source has dimension {f.dim}, expected {dim}")
        return f
    if callable(f):
        return SourceTerm.from_function(f, dim)
    return SourceTerm.constant(as_vector(f, dim, name="source"))


@dataclass
class PerturbationSpec:
    """Lower-order data for ``u' + B(t) A(t) u + C(t) u = f``.

    Parameters
    ----------
    B : float, PiecewiseAffine, array or callable
        Multiplier.  A number or a time coefficient multiplies ``S``; an
        array is a coordinatewise multiplier on the H representative.  A
        callable ``B(t, side)`` returns either; ``beta0`` and ``beta1`` are
        then required and every value is range checked.
    C : callable, optional
        ``C(t, side)`` returning the action matrix of ``C(t)``.
    h : float or PiecewiseAffine, optional
        Majorant with ``|C(t) u|_H^2 <= h(t) |u|_V^2``.
    beta0, beta1 : float, optional
        Bounds ``beta0 <= B <= beta1``; inferred from ``B`` when omitted.
    """

    B: object = 1.0
    C: object = None
    h: object = None
    beta0: float = None
    beta1: float = None

    def __post_init__(self):
        lo, hi = self._B_range()
        if self.beta0 is None:
            self.beta0 = lo
        if self.beta1 is None:
            self.beta1 = hi
        if not self.beta0 > 0:
            raise ValueError("the multiplier must be bounded below by a positive beta0")
        if lo < self.beta0 - 1e-14 or hi > self.beta1 + 1e-14:
            raise ValueError(f"multiplier range [{lo}, {hi}] is outside [beta0, beta1]")

    def _B_range(self):
        B = self.B
        if callable(B) and not isinstance(B, PiecewiseAffine):
            if self.beta0 is None or self.beta1 is None:
                raise ValueError("a callable multiplier needs explicit beta0 and beta1")
            return self.beta0, self.beta1
        if isinstance(B, PiecewiseAffine):
            return B.inf(), B.sup()
        arr = np.asarray(B, dtype=float)
        return float(arr.min()), float(arr.max())

    def h_value(self, t):
        if self.h is None:
            return 0.0
        return self.h(t) if isinstance(self.h, PiecewiseAffine) else float(self.h)

    def h_l1(self, T):
        if self.h is None:
            return 0.0
        if isinstance(self.h, PiecewiseAffine):
            if self.h.inf() < 0:
                raise ValueError("h must be nonnegative")
            return self.h.integral(0.0, T)
        return float(self.h) * T

    def scheme_matrix(self, space, S, t, side):
        """Action matrix of ``B A + C`` at ``t``."""
        B = self.B
        if callable(B) and not isinstance(B, PiecewiseAffine):
            B = B(t, side)
            lo, hi = float(np.min(B)), float(np.max(B))
            if lo < self.beta0 - 1e-14 or hi > self.beta1 + 1e-14:
                raise ValueError(f"multiplier takes values in [{lo:.6g}, {hi:.6g}] at t={t}, "
                                 f"outside [{self.beta0}, {self.beta1}]")
        if isinstance(B, PiecewiseAffine):
            out = B(t, side) * S
        elif np.ndim(B) == 0:
            out = float(B) * S
        else:
            out = space.gram_H @ (np.asarray(B, dtype=float)[:, None] * space.solve_H(S))
        if self.C is not None:
            out = out + self.C(t, side)
        return out


def c_operator_norm_sq(space, C):
    """Smallest ``h`` with ``|gram_H^{-1} C u|_H^2 <= h |u|_V^2``."""
    Q = C.conj().T @ space.solve_H(C)
    Q = 0.5 * (Q + Q.conj().T)
    return float(scipy.linalg.eigh(Q, space.gram_V, eigvals_only=True)[-1])


class Trajectory:
    """Discrete solution together with the data needed to audit it.

    Attributes
    ----------
    times : (K+1,) array
    states : (K+1, n) array
    sources : (K, n) array
        Source used on each cell.
    actions : (K, n) array
        Action vector of ``A u`` on each cell (``S_k u_{k+1}`` for implicit Euler).
    """

    def __init__(self, form, grid, states, sources, actions, scheme, perturbation=None):
        self.form = form
        self.grid = grid
        self.times = grid.times
        self.states = states
        self.sources = sources
        self.actions = actions
        self.scheme = scheme
        self.perturbation = perturbation

    @property
    def space(self):
        return self.form.space

    @property
    def inserted_times(self):
        return self.grid.inserted

    @property
    def final(self):
        return self.states[-1]

    def cell_matrix(self, k):
        """Coefficient matrix used on cell ``k``."""
        return self.form.assemble(self.times[k + 1], "left")

    def derivative(self):
        return np.diff(self.states, axis=0) / self.grid.steps[:, None]

    def au_representatives(self):
        """H representatives of ``A u`` on each cell."""
        return self.space.solve_H(self.actions.T).T

    def norms_V(self):
        return self.space.norms_V(self.states)

    def norms_H(self):
        return self.space.norms_H(self.states)

    def to_csv(self, path):
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t"] + [f"u{i}" for i in range(n)])
            for t, row in zip(self.times, self.states):
                cells = [repr(float(x)) for x in row] if np.isrealobj(row) else [repr(complex(x)) for x in row]
                writer.writerow([repr(float(t))] + cells)

    def __repr__(self):
        return f"<Trajectory {self.scheme} K={self.grid.K} n={self.states.shape[1]}>"


class _StepFactor:
    """Factorization cache: refactor only when the step matrix changes."""

    def __init__(self):
        self.matrix = None
        self.factor = None
        self.kind = None
        self.count = 0

    def solve(self, A, rhs, k):
        if self.matrix is None or A.shape != self.matrix.shape or not np.array_equal(A, self.matrix):
            try:
                if is_hermitian(A):
                    self.factor, self.kind = scipy.linalg.cho_factor(A, lower=True), "cholesky"
                else:
                    self.factor, self.kind = scipy.linalg.lu_factor(A, check_finite=True), "lu"
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise SolverError(f"step {k}: factorization of the step matrix failed ({exc})") from exc
            self.matrix = A.copy()
            self.count += 1
        if not np.all(np.isfinite(rhs)):
            raise SolverError(f"step {k}: non-finite right-hand side")
        if self.kind == "cholesky":
            x = scipy.linalg.cho_solve(self.factor, rhs)
        else:
            x = scipy.linalg.lu_solve(self.factor, rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError(f"step {k}: non-finite state")
        return x


def prepare_grid(form, grid, extra_jumps=()):
    """Grid for ``form``: uniform if ``grid`` is an int, with jump times inserted."""
    jumps = sorted(set(form.jump_times) | set(extra_jumps))
    if isinstance(grid, (int, np.integer)):
        return TimeGrid.uniform(form.T, int(grid), jumps)
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(grid)
    if not math.isclose(grid.T, form.T):
        raise ValueError(f"grid ends at {grid.T}, form horizon is {form.T}")
    tol = 1e-12 * grid.T
    missing = [t for t in jumps if 0.0 < t < grid.T and np.min(np.abs(grid.times - t)) > tol]
    if missing:
        grid = TimeGrid(np.sort(np.concatenate((grid.times, missing))),
                        inserted=sorted(set(grid.inserted) | set(missing)))
    return grid


def _march(form, u0, f, grid, scheme, operator):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    space = form.space
    n = space.dim
    u0 = as_vector(u0, n, name="u0")
    src = _as_source(f, n)
    G = space.gram_H
    steps = grid.steps
    K = grid.K
    dtype = np.result_type(u0, G, form.assemble(0.0), complex if space.is_complex else float)
    states = np.empty((K + 1, n), dtype=dtype)
    actions = np.empty((K, n), dtype=dtype)
    sources = np.empty((K, n), dtype=dtype)
    states[0] = u0
    cache = _StepFactor()
    prev_full = prev_S = None
    if scheme == "crank_nicolson":
        prev_S = form.assemble(0.0)
        prev_full = operator(prev_S, 0.0, "raw")
    for k in range(K):
        dt = steps[k]
        t1 = grid.times[k + 1]
        fk = src(grid.midpoints[k])
        sources[k] = fk
        u = states[k]
        if scheme == "implicit_euler":
            S = form.assemble(t1, "left")
            full = operator(S, t1, "left")
            u_new = cache.solve(G + dt * full, G @ u + dt * (G @ fk), k)
            actions[k] = S @ u_new
        else:
            S = form.assemble(t1)
            full = operator(S, t1, "raw")
            rhs = G @ u - 0.5 * dt * (prev_full @ u) + dt * (G @ fk)
            u_new = cache.solve(G + 0.5 * dt * full, rhs, k)
            actions[k] = 0.5 * (S @ u_new + prev_S @ u)
            prev_S, prev_full = S, full
        states[k + 1] = u_new
    return states, sources, actions


def solve_linear(form, grid, f=None, u0=None, scheme="implicit_euler"):
    """Solve ``u' + A(t) u = f`` on ``[0, T]``.

    Parameters
    ----------
    form : NonAutonomousForm
    grid : TimeGrid, array_like or int
        Time grid, or a number of uniform steps.  Jump times of the form
        that are missing from the grid are inserted and listed in
        ``grid.inserted``.
    f : SourceTerm, callable, array_like or None
        Source; a constant vector or ``None`` (zero) are accepted.
    u0 : array_like
        Initial coefficients (an element of V).
    scheme : {"implicit_euler", "crank_nicolson"}

    Returns
    -------
    Trajectory
    """
    if u0 is None:
        raise ValueError("an initial value u0 is required")
    if scheme == "crank_nicolson" and (form.lipschitz is None or form.jump_times):
        raise ValueError("Crank-Nicolson needs a form that is Lipschitz in time; use implicit_euler")
    grid = prepare_grid(form, grid)
    states, sources, actions = _march(form, u0, f, grid, scheme, lambda S, t, side: S)
    return Trajectory(form, grid, states, sources, actions, scheme)


def solve_perturbed(form, perturbation, grid, f=None, u0=None):
    """Implicit Euler for ``u' + B(t) A(t) u + C(t) u = f``.

    With ``B = 1`` and no ``C`` this reproduces :func:`solve_linear`
    bit for bit.
    """
    if u0 is None:
        raise ValueError("an initial value u0 is required")
    pert = perturbation if isinstance(perturbation, PerturbationSpec) else PerturbationSpec(**perturbation)
    extra = set()
    for part in (pert.B, pert.C):
        extra.update(getattr(part, "jump_times", ()))
    grid = prepare_grid(form, grid, extra)
    space = form.space

    def operator(S, t, side):
        return pert.scheme_matrix(space, S, t, side)

    states, sources, actions = _march(form, u0, f, grid, "implicit_euler", operator)
    return Trajectory(form, grid, states, sources, actions, "implicit_euler", perturbation=pert)


@dataclass
class MRNorms:
    """Discrete maximal-regularity norms of a trajectory.

    ``du_l2h`` and ``au_l2h`` are the L2(0,T;H) norms of ``u'`` and
    ``A u``, ``u_l2v`` the L2(0,T;V) norm and ``u_supv`` the largest nodal
    V norm.  ``mr_norm_sq = au_l2h**2 + du_l2h**2``.
    """

    du_l2h: float
    au_l2h: float
    u_l2v: float
    u_supv: float
    u_l2h: float

    @property
    def mr_norm_sq(self):
        return self.au_l2h**2 + self.du_l2h**2

    def to_dict(self):
        return {**asdict(self), "mr_norm_sq": self.mr_norm_sq}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def mr_norms(traj):
    """Norms with backward differences and right-end-point rectangle sums."""
    space = traj.space
    dt = traj.grid.steps
    du = space.norms_H(traj.derivative())
    au = space.norms_H(traj.au_representatives())
    uv = traj.norms_V()
    uh = traj.norms_H()
    return MRNorms(du_l2h=float(np.sqrt(np.sum(dt * du**2))),
                   au_l2h=float(np.sqrt(np.sum(dt * au**2))),
                   u_l2v=float(np.sqrt(np.sum(dt * uv[1:] ** 2))),
                   u_supv=float(uv.max()),
                   u_l2h=float(np.sqrt(np.sum(dt * uh[1:] ** 2))))


def lp_time_norm(traj, p, space_norm="V"):
    """``(sum dt |u_{k+1}|^p)^{1/p}`` in the V or H norm; ``p = inf`` gives the max."""
    if space_norm not in ("V", "H"):
        raise ValueError("space_norm must be 'V' or 'H'")
    vals = traj.norms_V() if space_norm == "V" else traj.norms_H()
    if p == math.inf:
        return float(vals.max())
    if p < 1:
        raise ValueError("p must be at least 1")
    return float(np.sum(traj.grid.steps * vals[1:] ** p) ** (1.0 / p))


def modulus_of_continuity_V(traj, delta=None):
    """Largest V-norm increment between grid nodes.

    Without ``delta`` this is ``max_k |u_{k+1} - u_k|_V``; with ``delta``
    all node pairs at most ``delta`` apart are compared.
    """
    times, states, space = traj.times, traj.states, traj.space
    if delta is None:
        return float(space.norms_V(np.diff(states, axis=0)).max())
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    best = 0.0
    for i in range(times.size):
        j = int(np.searchsorted(times, times[i] + delta * (1 + 1e-12), side="right"))
        if j > i + 1:
            best = max(best, float(space.norms_V(states[i + 1:j] - states[i]).max()))
    return best
