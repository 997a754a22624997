"""Non-autonomous forms ``a(t, u, v) = v^* S(t) u`` on a Gelfand triple.

Built-ins are *affine* in a handful of time coefficients,
``S(t) = sum_k phi_k(t) S_k``, with each ``phi_k`` a
:class:`~bvmr.bv_time.PiecewiseAffine`.  That keeps one-sided limits exact
and lets the time convolution be done coefficient by coefficient.

Declared constants
------------------
* scalar ``a(t) v w`` on ``gram_H = gram_V = gamma``: ``M = sup|a|/gamma``,
  ``alpha = inf a/gamma``, modulus ``var(a)/gamma``.
* 1D elliptic (Dirichlet, V = H^1_0 with the full H^1 product): the form is
  ``int a v' w' + int v w`` so ``alpha = min(inf a, 1)``, ``M = max(sup a, 1)``.
  Since ``|int (a(t) - a(s)) v' w'| <= sup_x |a(t) - a(s)| |v'| |w'|`` and the
  seminorm is dominated by the V norm, the modulus is the pointwise-in-x
  maximum of the coefficient increments (V-geometry factor 1).
* 1D Robin (V = H^1): boundary terms ``beta_e(t) v(e) w(e)``.  The point
  evaluation at node ``e`` has V-dual norm ``tau_e = e^T gram_V^{-1} e``
  (the discrete trace constant squared), which is the factor applied to
  the increments of ``beta_e``.  ``alpha`` and ``M`` are computed exactly
  by probing the cell end points of the coefficient partition: on each cell
  ``S(t)`` is affine in ``t``, the smallest eigenvalue is concave and the
  norm convex along it, so the extremes sit at the end points.
"""

import csv
import json
import math
from functools import cached_property

import numpy as np

from . import bv_time
from .bv_time import BVModulus, Mollifier, PiecewiseAffine, dominating_modulus
from .gelfand import GelfandSpace
from ._validation import as_square


def _coef(c, T):
    if isinstance(c, (PiecewiseAffine, bv_time.MollifiedFunction)):
        return c
    if isinstance(c, dict):
        return PiecewiseAffine.from_dict(c)
    return PiecewiseAffine.constant(float(c), T)


class AffineFamily:
    """Matrix family ``t -> sum_k phi_k(t) S_k``."""

    def __init__(self, terms, T):
        self.T = float(T)
        self.terms = [(_coef(c, T), np.asarray(S)) for c, S in terms]
        if not self.terms:
            raise ValueError("an affine family needs at least one term")
        self.shape = self.terms[0][1].shape

    def __call__(self, t, side="raw"):
        out = np.zeros(self.shape, dtype=np.result_type(*(S for _, S in self.terms)))
        for c, S in self.terms:
            out = out + c(t, side) * S
        return out

    @property
    def jump_times(self):
        times = set()
        for c, _ in self.terms:
            times.update(c.jump_times)
        return tuple(sorted(times))

    def mollified(self, moll):
        return AffineFamily([(c.mollified(moll) if isinstance(c, PiecewiseAffine) else c, S)
                             for c, S in self.terms], self.T)


class NonAutonomousForm:
    """Time-indexed sesquilinear form with declared bound, coercivity and modulus.

    Parameters
    ----------
    space : GelfandSpace
    assemble : callable
        ``assemble(t, side)`` returning the ``n x n`` matrix ``S(t)``; ``side``
        is ``"raw"``, ``"left"`` or ``"right"``.
    M, alpha : float
        Declared V-bound and coercivity constant.
    modulus : BVModulus or MollifiedFunction
        Non-decreasing ``g`` dominating the time increments.
    symmetric : bool
    lipschitz : float, optional
        Lipschitz constant in time, when the form has one.
    jump_times : sequence of float
        Times where ``S`` may jump.
    mesh : Mesh1D, optional
        Finite element mesh the coordinates refer to.
    """

    def __init__(self, space, assemble, M, alpha, modulus, T, symmetric=True, lipschitz=None,
                 jump_times=(), mesh=None, spec=None):
        if not alpha > 0:
            raise ValueError(f"coercivity constant must be positive, got {alpha}")
        if not M >= alpha:
            raise ValueError(f"bound M={M} is smaller than alpha={alpha}")
        self.space = space
        self._assemble = assemble
        self.M = float(M)
        self.alpha = float(alpha)
        self.modulus = modulus
        self.T = float(T)
        self.symmetric = bool(symmetric)
        self.lipschitz = None if lipschitz is None else float(lipschitz)
        self._jump_times = tuple(sorted(float(t) for t in jump_times))
        self.mesh = mesh
        self.spec = spec

    def assemble(self, t, side="raw"):
        t = float(t)
        if not (0.0 <= t <= self.T * (1 + 1e-14)):
            raise ValueError(f"t={t} outside [0, {self.T}]")
        return self._assemble(min(t, self.T), side)

    @property
    def jump_times(self):
        mod = tuple(getattr(self.modulus, "jump_times", ()))
        return tuple(sorted(set(self._jump_times) | {t for t in mod if t < self.T}))

    @property
    def dim(self):
        return self.space.dim

    def __repr__(self):
        name = self.spec["builder"] if self.spec else type(self).__name__
        return f"<NonAutonomousForm {name} n={self.dim} M={self.M:g} alpha={self.alpha:g}>"

    def to_json(self):
        if self.spec is None:
            raise ValueError("form was not produced by a registered builder")
        return json.dumps(self.spec, sort_keys=True)


class AffineForm(NonAutonomousForm):
    """Form ``S(t) = sum_k phi_k(t) S_k`` with scalar time coefficients."""

    def __init__(self, space, terms, M, alpha, modulus, T, symmetric=None, lipschitz="auto",
                 mesh=None, spec=None):
        family = terms if isinstance(terms, AffineFamily) else AffineFamily(terms, T)
        if symmetric is None:
            symmetric = all(np.allclose(S, S.conj().T) for _, S in family.terms)
        if lipschitz == "auto":
            lipschitz = self._lipschitz(space, family)
        self.family = family
        super().__init__(space, family, M, alpha, modulus, T, symmetric=symmetric,
                         lipschitz=lipschitz, jump_times=family.jump_times, mesh=mesh, spec=spec)

    @staticmethod
    def _lipschitz(space, family):
        total = 0.0
        for c, S in family.terms:
            if not isinstance(c, PiecewiseAffine):
                return None
            if not c.is_continuous:
                return None
            if np.any(c.slopes):
                total += np.abs(c.slopes).max() * space.v_operator_norm(S)
        return total


class Mesh1D:
    """Uniform P1 mesh of ``[0, 1]``.

    ``boundary`` is ``"dirichlet"`` (unknowns at interior nodes) or
    ``"robin"`` (unknowns at all nodes).
    """

    def __init__(self, n_elements, boundary="dirichlet"):
        if int(n_elements) != n_elements or n_elements < 2:
            raise ValueError("a mesh needs at least two elements")
        if boundary not in ("dirichlet", "robin"):
            raise ValueError(f"unknown boundary type {boundary!r}")
        self.n_elements = int(n_elements)
        self.boundary = boundary
        self.nodes = np.linspace(0.0, 1.0, self.n_elements + 1)
        self.h = 1.0 / self.n_elements

    @property
    def dofs(self):
        if self.boundary == "dirichlet":
            return np.arange(1, self.n_elements)
        return np.arange(self.n_elements + 1)

    @property
    def midpoints(self):
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def dof_coordinates(self):
        return self.nodes[self.dofs]

    def _assemble(self, local, weights=None):
        E = self.n_elements
        full = np.zeros((E + 1, E + 1))
        w = np.ones(E) if weights is None else np.asarray(weights, dtype=float)
        for e in range(E):
            full[e:e + 2, e:e + 2] += w[e] * local
        d = self.dofs
        return full[np.ix_(d, d)]

    def stiffness(self, weights=None):
        return self._assemble(np.array([[1.0, -1.0], [-1.0, 1.0]]) / self.h, weights)

    def mass(self, weights=None):
        return self._assemble(self.h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]]), weights)

    def advection(self, weights=None):
        """Matrix of ``int b v' w`` (rows: test functions)."""
        return self._assemble(0.5 * np.array([[-1.0, 1.0], [-1.0, 1.0]]), weights)

    def piece_indicator(self, x_breaks):
        """Element membership in the x cells of ``x_breaks`` (by midpoint)."""
        x_breaks = np.asarray(x_breaks, dtype=float)
        if x_breaks[0] != 0.0 or x_breaks[-1] != 1.0 or np.any(np.diff(x_breaks) <= 0):
            raise ValueError("x_breaks must increase from 0 to 1")
        idx = np.searchsorted(x_breaks, self.midpoints, side="right") - 1
        return [(idx == j).astype(float) for j in range(x_breaks.size - 1)]

    def full_values(self, coords):
        """Nodal values on all mesh nodes (zero Dirichlet values filled in)."""
        coords = np.asarray(coords)
        out = np.zeros(self.n_elements + 1, dtype=coords.dtype)
        out[self.dofs] = coords
        return out

    def nodal_gradient(self, coords):
        """Elementwise P1 gradients averaged to the unknown nodes."""
        full = self.full_values(coords)
        grad_e = np.diff(full) / self.h
        node = np.empty(self.n_elements + 1, dtype=grad_e.dtype)
        node[0], node[-1] = grad_e[0], grad_e[-1]
        node[1:-1] = 0.5 * (grad_e[:-1] + grad_e[1:])
        return node[self.dofs]

    def h1_space(self):
        M = self.mass()
        return GelfandSpace(M, self.stiffness() + M)

    def __repr__(self):
        return f"Mesh1D(n_elements={self.n_elements}, boundary={self.boundary!r})"


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def assemble(form, t, side="raw"):
    return form.assemble(t, side)


def operator_apply_H(form, t, u, side="raw"):
    """H-representative ``z`` of ``A(t) u``: ``(z | v)_H = a(t, u, v)`` for all v."""
    u = np.asarray(u)
    return form.space.h_representative(form.assemble(t, side) @ u)


def probe_constants(form, sample_times, sides=("raw",)):
    """Return ``(M_hat, alpha_hat)`` observed over the sample times."""
    if len(sample_times) == 0:
        raise ValueError("probe_constants needs at least one sample time")
    space = form.space
    M_hat, alpha_hat = 0.0, math.inf
    for t in sample_times:
        for side in sides:
            W = space.v_geometry(form.assemble(t, side))
            M_hat = max(M_hat, float(np.linalg.norm(W, 2)))
            sym = 0.5 * (W + W.conj().T)
            try:
                alpha_hat = min(alpha_hat, float(np.linalg.eigvalsh(sym)[0]))
            except np.linalg.LinAlgError as exc:
                raise ValueError("eigenvalue computation failed") from exc
    return M_hat, alpha_hat


def probe_bv(form, partition, modulus=None):
    """Worst slack ``[g(t) - g(s)] - ||S(t) - S(s)||_V`` over consecutive points."""
    g = form.modulus if modulus is None else modulus
    pts = sorted(float(t) for t in partition)
    if len(pts) < 2:
        raise ValueError("probe_bv needs at least two times")
    worst = math.inf
    prev_t, prev_S, prev_g = pts[0], form.assemble(pts[0]), g(pts[0])
    for t in pts[1:]:
        S, gt = form.assemble(t), g(t)
        slack = (gt - prev_g) - form.space.v_operator_norm(S - prev_S)
        worst = min(worst, slack)
        prev_t, prev_S, prev_g = t, S, gt
    return worst


class _MollifiedModulus(bv_time.MollifiedFunction):
    """Mollified modulus with the modulus interface used by the estimates."""

    def eval(self, t, side="raw"):
        return self(t)

    def total_variation(self):
        return self(self.T) - self(0.0)

    def measure(self, a, b):
        if not a < b:
            raise ValueError("measure needs a < b")
        return self(b) - self(a)


def mollify_form(form, moll):
    """Form with ``S_n(t) = (S * rho_n)(t)``; ``S`` extended by ``S(0)``, ``S(T)``.

    Bound and coercivity are inherited (the convolution is a convex
    combination); the modulus becomes ``g * rho_n``.
    """
    if isinstance(moll, int):
        moll = Mollifier(moll)
    modulus = _MollifiedModulus(form.modulus, moll)
    lip = moll.order * moll.derivative_l1() * form.modulus.total_variation()
    spec = None if form.spec is None else {**form.spec, "mollifier": moll.order}
    if isinstance(form, AffineForm):
        return AffineForm(form.space, form.family.mollified(moll), form.M, form.alpha, modulus, form.T,
                          symmetric=form.symmetric, lipschitz=lip, mesh=form.mesh, spec=spec)
    return NonAutonomousForm(form.space, _ConvolvedAssembler(form, moll), form.M, form.alpha,
                             modulus, form.T, symmetric=form.symmetric, lipschitz=lip,
                             mesh=form.mesh, spec=spec)


class _ConvolvedAssembler:
    """Kernel quadrature of a generic matrix family, split at its jump times."""

    def __init__(self, form, moll):
        self.form, self.moll = form, moll

    def __call__(self, t, side="raw"):
        n, T = self.moll.order, self.form.T
        cuts = [n * (t - s) for s in (0.0, T, *self.form.jump_times)]
        edges = np.unique(np.clip([-1.0, 1.0, *cuts], -1.0, 1.0))
        acc, mass = 0.0, 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            m = self.moll._cells(b - a)
            x = np.linspace(a, b, m + 1)
            w = np.ones(m + 1)
            w[1:-1:2], w[2:-1:2] = 4.0, 2.0
            w *= (b - a) / (3.0 * m) * self.moll.rho(x)
            mid = t - 0.5 * (a + b) / n
            for xi, wi in zip(x, w):
                if wi == 0.0:
                    continue
                s = min(max(t - xi / n, 0.0), T)
                # stay on the piece of the cell midpoint at jump points
                s_side = "left" if s > mid else "right"
                acc = acc + wi * self.form.assemble(s, s_side)
                mass += wi
        return acc / mass


def export_matrix_csv(matrix, path):
    matrix = np.atleast_2d(np.asarray(matrix))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"c{j}" for j in range(matrix.shape[1])])
        for row in matrix:
            writer.writerow([repr(float(x)) for x in row.real])


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_scalar(a, T=1.0, gram=1.0, modulus=None):
    """Scalar form ``a(t) v w`` on ``gram_H = gram_V = [gram]``."""
    a = _coef(a, T)
    gamma = float(gram)
    space = GelfandSpace([[gamma]], [[gamma]])
    if a.inf() <= 0:
        raise ValueError("scalar coefficient must be positive")
    if modulus is None:
        modulus = dominating_modulus([(1.0 / gamma, [a])], T)
    spec = {"builder": "scalar", "params": {"a": a.to_dict(), "T": T, "gram": gamma}}
    return AffineForm(space, [(a, np.array([[1.0]]))], a.sup_abs() / gamma, a.inf() / gamma,
                      modulus, T, symmetric=True, spec=spec)


def build_diagonal(coefs, T=1.0, modulus=None):
    """Decoupled system ``S(t) = diag(a_1(t), ..., a_n(t))`` on the identity triple."""
    coefs = [_coef(c, T) for c in coefs]
    n = len(coefs)
    space = GelfandSpace.identity(n)
    terms = []
    for i, c in enumerate(coefs):
        E = np.zeros((n, n))
        E[i, i] = 1.0
        terms.append((c, E))
    if modulus is None:
        modulus = dominating_modulus([(1.0, coefs)], T)
    return AffineForm(space, terms, max(c.sup_abs() for c in coefs), min(c.inf() for c in coefs),
                      modulus, T, symmetric=True)


def _piece_coefs(values, n_pieces, T, name):
    if values is None:
        return None
    if not isinstance(values, (list, tuple)):
        values = [values] * n_pieces
    if len(values) != n_pieces:
        raise ValueError(f"{name} needs one coefficient per x cell ({n_pieces})")
    return [_coef(v, T) for v in values]


def build_elliptic_1d(mesh, coef, drift=None, potential=None, x_breaks=None, T=1.0, modulus=None):
    """Dirichlet form ``int a v' w' + int v w`` and its lower-order perturbation.

    ``coef``, ``drift`` and ``potential`` are lists with one time coefficient
    per cell of ``x_breaks`` (a scalar or a single coefficient is broadcast).
    Drift and potential are routed to ``C v = b v' + (c - 1) v``, which
    compensates the unit mass term in the form.

    Returns
    -------
    form : AffineForm
    perturbation : PerturbationSpec
        ``B = 1`` and the ``C`` family with majorant ``h``.
    """
    from .stepper import PerturbationSpec

    if mesh.boundary != "dirichlet":
        raise ValueError("build_elliptic_1d needs a Dirichlet mesh")
    if x_breaks is None:
        x_breaks = [0.0, 1.0]
    n_pieces = len(x_breaks) - 1
    coefs = _piece_coefs(coef, n_pieces, T, "coef")
    drifts = _piece_coefs(drift, n_pieces, T, "drift")
    pots = _piece_coefs(potential, n_pieces, T, "potential")
    alpha_c = min(c.inf() for c in coefs)
    if alpha_c <= 0:
        raise ValueError(f"diffusion coefficient falls to {alpha_c}, below the coercivity floor")
    M_c = max(c.sup_abs() for c in coefs)
    space = mesh.h1_space()
    indicators = mesh.piece_indicator(x_breaks)
    terms = [(c, mesh.stiffness(ind)) for c, ind in zip(coefs, indicators)]
    terms.append((PiecewiseAffine.constant(1.0, T), mesh.mass()))
    if modulus is None:
        modulus = dominating_modulus([(1.0, coefs)], T)
    spec = {"builder": "elliptic_1d",
            "params": {"n_elements": mesh.n_elements, "x_breaks": list(map(float, x_breaks)), "T": T,
                       "coef": [c.to_dict() for c in coefs],
                       "drift": None if drifts is None else [c.to_dict() for c in drifts],
                       "potential": None if pots is None else [c.to_dict() for c in pots]}}
    form = AffineForm(space, terms, max(M_c, 1.0), min(alpha_c, 1.0), modulus, T,
                      symmetric=True, mesh=mesh, spec=spec)

    c_terms = []
    for group in (drifts, pots):
        if group is not None and any(np.any(c.slopes) for c in group):
            raise ValueError("drift and potential must be piecewise constant in time")
    pots = pots or [PiecewiseAffine.constant(0.0, T)] * n_pieces
    for j, ind in enumerate(indicators):
        if drifts is not None:
            c_terms.append((drifts[j], mesh.advection(ind)))
        c_terms.append((pots[j].scaled(1.0, -1.0), mesh.mass(ind)))
    C = AffineFamily(c_terms, T)
    groups = [c for c in (drifts or [])] + pots
    breaks = sorted(set().union(*(set(c.breaks.tolist()) for c in groups)))
    mids = 0.5 * (np.array(breaks[:-1]) + np.array(breaks[1:]))
    h_vals = []
    for m in mids:
        bmax = max((abs(b(m)) for b in drifts), default=0.0) if drifts else 0.0
        cmax = max(abs(c(m) - 1.0) for c in pots)
        h_vals.append(bmax**2 + cmax**2)
    h = PiecewiseAffine(breaks, h_vals)
    return form, PerturbationSpec(B=1.0, C=C, h=h, beta0=1.0, beta1=1.0)


def build_robin_1d(mesh, beta0=0.0, beta1=0.0, shift=1.0, T=1.0, modulus=None):
    """Robin form ``int v' w' + beta(t,0) v(0) w(0) + beta(t,1) v(1) w(1) + shift (v|w)_H`` on H^1."""
    if mesh.boundary != "robin":
        raise ValueError("build_robin_1d needs a Robin mesh")
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    b0, b1 = _coef(beta0, T), _coef(beta1, T)
    space = mesh.h1_space()
    n = space.dim
    E0, E1 = np.zeros((n, n)), np.zeros((n, n))
    E0[0, 0] = 1.0
    E1[-1, -1] = 1.0
    base = mesh.stiffness() + shift * mesh.mass()
    terms = [(PiecewiseAffine.constant(1.0, T), base), (b0, E0), (b1, E1)]
    family = AffineFamily(terms, T)
    pts = sorted(set(b0.breaks.tolist()) | set(b1.breaks.tolist()))
    probe = NonAutonomousForm(space, family, 1.0, 1.0, BVModulus(T=T), T)
    M_hat, alpha_hat = probe_constants(probe, pts, sides=("left", "right"))
    if alpha_hat <= 0:
        raise ValueError(f"shifted Robin form is not coercive (alpha_hat={alpha_hat:.3g}); increase the shift")
    if modulus is None:
        tau0, tau1 = trace_constant_sq(space, 0), trace_constant_sq(space, n - 1)
        modulus = dominating_modulus([(tau0, [b0]), (tau1, [b1])], T)
    spec = {"builder": "robin_1d",
            "params": {"n_elements": mesh.n_elements, "beta0": b0.to_dict(), "beta1": b1.to_dict(),
                       "shift": shift, "T": T}}
    return AffineForm(space, family, M_hat, alpha_hat, modulus, T, symmetric=True, mesh=mesh, spec=spec)


def trace_constant_sq(space, node):
    """``e^T gram_V^{-1} e``: squared V-dual norm of evaluation at a coordinate."""
    e = np.zeros(space.dim)
    e[node] = 1.0
    return float(np.linalg.solve(space.gram_V, e)[node])


BUILDERS = ("scalar", "elliptic_1d", "robin_1d")


def build_form(spec):
    """Rebuild a form (and perturbation part, if any) from its JSON spec."""
    if isinstance(spec, str):
        spec = json.loads(spec)
    name = spec.get("builder")
    params = dict(spec.get("params", {}))
    modulus = spec.get("modulus")
    modulus = None if modulus is None else BVModulus.from_dict(modulus)
    T = float(params.pop("T", 1.0))
    if name == "scalar":
        form = build_scalar(params.get("a", 1.0), T=T, gram=params.get("gram", 1.0), modulus=modulus)
        pert = None
    elif name == "elliptic_1d":
        mesh = Mesh1D(params["n_elements"], "dirichlet")
        form, pert = build_elliptic_1d(mesh, params.get("coef", 1.0), drift=params.get("drift"),
                                       potential=params.get("potential"), x_breaks=params.get("x_breaks"),
                                       T=T, modulus=modulus)
    elif name == "robin_1d":
        mesh = Mesh1D(params["n_elements"], "robin")
        form = build_robin_1d(mesh, params.get("beta0", 0.0), params.get("beta1", 0.0),
                              shift=params.get("shift", 1.0), T=T, modulus=modulus)
        pert = None
    else:
        raise ValueError(f"unknown builder {name!r}; expected one of {BUILDERS}")
    if spec.get("mollifier"):
        form = mollify_form(form, Mollifier(int(spec["mollifier"])))
    return form, pert
