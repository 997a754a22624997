"""Bounded-variation time functions, their Stieltjes measure and time mollification.

Two concrete representations are used throughout:

* :class:`BVModulus` -- a non-decreasing modulus ``g`` made of a base value,
  positive jumps at points of ``(0, T]`` and a piecewise-constant
  nonnegative density.  Raw evaluation is right-continuous.
* :class:`PiecewiseAffine` -- a signed coefficient ``phi(t)`` that is affine
  on each cell of a partition of ``[0, T]`` and right-continuous at the
  interior breaks.  Form coefficients are built from these.

Both are extended to the real line by their value at ``0`` on the left
and their value at ``T`` on the right before convolving with the kernel.

Singular continuous (Cantor-type) parts and signed moduli are not
representable.  The one-sided convention at the end point follows the
usual BV bookkeeping literally: ``g+(T)`` is the limit from the left, so
the right-continuous version is *not* right-continuous at ``T`` when ``g``
jumps there.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate

SIDES = ("raw", "left", "right")


def _bump(tau):
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    inside = np.abs(tau) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - tau[inside] ** 2))
    return out


def _bump_prime(tau):
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    inside = np.abs(tau) < 1.0
    ti = tau[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti**2)) * (-2.0 * ti / (1.0 - ti**2) ** 2)
    return out


def _bump_mass():
    # even integrand; integrate one half to keep quad away from roundoff warnings
    value, _ = scipy.integrate.quad(lambda s: math.exp(-1.0 / (1.0 - s * s)), 0.0, 1.0,
                                    epsabs=1e-14, epsrel=1e-13, limit=200)
    return 2.0 * value


KERNEL_CONSTANT = 1.0 / _bump_mass()


class QuadratureError(RuntimeError):
    """Kernel quadrature is too coarse for the requested accuracy."""


def _simpson_moments(a, b, m, kernel):
    """Composite Simpson values of ``int_a^b k`` and ``int_a^b tau k`` with ``m`` (even) cells."""
    x = np.linspace(a, b, m + 1)
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= (b - a) / (3.0 * m)
    k = kernel(x)
    return float(w @ k), float(w @ (x * k))


@dataclass(frozen=True)
class Mollifier:
    """Standard bump kernel scaled to support ``[-1/n, 1/n]``.

    ``rho(t) = c exp(-1/(1 - t^2))`` on ``(-1, 1)`` with ``int rho = 1`` and
    ``rho_n(t) = n rho(n t)``.  ``nodes`` is the number of Simpson cells
    spread over the kernel support.
    """

    order: int
    nodes: int = 512
    mass_tol: float = 1e-10

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"mollifier order must be a positive integer, got {self.order}")
        if self.nodes < 64:
            raise ValueError("at least 64 quadrature cells are required on the kernel support")
        err = abs(self.mass() - 1.0)
        if err > self.mass_tol:
            raise QuadratureError(
                f"kernel mass error {err:.2e} exceeds {self.mass_tol:.1e} with {self.nodes} cells")

    @property
    def radius(self):
        return 1.0 / self.order

    def rho(self, tau):
        return KERNEL_CONSTANT * _bump(tau)

    def rho_prime(self, tau):
        return KERNEL_CONSTANT * _bump_prime(tau)

    def rho_n(self, t):
        return self.order * self.rho(self.order * np.asarray(t, dtype=float))

    def mass(self):
        m = self.nodes + self.nodes % 2
        return _simpson_moments(-1.0, 1.0, m, self.rho)[0]

    def derivative_l1(self):
        """``int |rho'|``; the bump is unimodal so this is ``2 rho(0)``."""
        return 2.0 * KERNEL_CONSTANT * math.exp(-1.0)

    def _cells(self, length):
        m = max(2, int(math.ceil(self.nodes * length / 2.0)))
        return m + m % 2


class _PiecewiseAffineLike:
    """Shared machinery for functions that are affine between breakpoints.

    Subclasses provide ``T``, ``_breakpoints()`` (sorted, finite list of
    points in ``[0, T]`` where the function or its slope may change) and
    ``_affine_at(s)`` returning ``(value, slope)`` of the piece containing
    the (non-break) point ``s`` of the extended function.
    """

    def _breakpoints(self):
        raise NotImplementedError

    def _affine_at(self, s):
        raise NotImplementedError

    def _convolve(self, t, moll, derivative=False):
        n = moll.order
        pts = np.asarray(self._breakpoints(), dtype=float)
        taus = n * (t - pts)
        inner = np.sort(taus[(taus > -1.0) & (taus < 1.0)])
        edges = np.concatenate(([-1.0], inner, [1.0]))
        kernel = moll.rho_prime if derivative else moll.rho
        total = 0.0
        mass = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            if b - a <= 0.0:
                continue
            s_mid = t - 0.5 * (a + b) / n
            v, sl = self._affine_at(s_mid)
            # phi(t - tau/n) = A + B tau on this cell
            A = v + sl * (t - s_mid)
            B = -sl / n
            m0, m1 = _simpson_moments(a, b, moll._cells(b - a), kernel)
            total += A * m0 + B * m1
            if not derivative:
                mass += m0
        if derivative:
            return n * total
        # renormalise so the result is a convex combination of values
        return total / mass

    def mollified(self, moll):
        return MollifiedFunction(self, moll)

    def shift_difference_l2(self, h):
        """``|| phi(. + h) - phi(. - h) ||_{L^2(0, T)}`` of the extended function."""
        pts = np.asarray(self._breakpoints(), dtype=float)
        cand = np.concatenate((pts - h, pts + h, [0.0, self.T]))
        cand = np.unique(np.clip(cand, 0.0, self.T))
        total = 0.0
        for a, b in zip(cand[:-1], cand[1:]):
            if b - a <= 0.0:
                continue
            mid = 0.5 * (a + b)
            vp, sp = self._affine_at(mid + h)
            vm, sm = self._affine_at(mid - h)
            # difference is affine on the cell; Simpson is exact for its square
            def diff(x):
                return (vp + sp * (x - mid)) - (vm + sm * (x - mid))
            total += (b - a) / 6.0 * (diff(a) ** 2 + 4 * diff(mid) ** 2 + diff(b) ** 2)
        return math.sqrt(total)


class MollifiedFunction:
    """``rho_n * phi`` evaluated by piecewise Simpson quadrature over the kernel support."""

    jump_times = ()

    def __init__(self, parent, moll):
        self.parent = parent
        self.moll = moll
        self.T = parent.T

    def __call__(self, t, side="raw"):
        return self.parent._convolve(float(t), self.moll)

    def derivative(self, t):
        return self.parent._convolve(float(t), self.moll, derivative=True)

    def __repr__(self):
        return f"MollifiedFunction({self.parent!r}, n={self.moll.order})"


class PiecewiseAffine(_PiecewiseAffineLike):
    """Signed time coefficient, affine on each cell ``[b_j, b_{j+1})``.

    Parameters
    ----------
    breaks : sequence of float
        ``0 = b_0 < b_1 < ... < b_m = T``.
    values : sequence of float
        Value at the left end of each cell (length ``m``).
    slopes : sequence of float, optional
        Slope on each cell; zero by default.
    """

    def __init__(self, breaks, values, slopes=None):
        breaks = np.asarray(breaks, dtype=float)
        values = np.asarray(values, dtype=float).reshape(-1)
        if breaks.ndim != 1 or breaks.size < 2:
            raise ValueError("breaks must contain at least two points")
        if breaks[0] != 0.0 or np.any(np.diff(breaks) <= 0):
            raise ValueError("breaks must start at 0 and be strictly increasing")
        if values.size != breaks.size - 1:
            raise ValueError("need one value per cell")
        slopes = np.zeros_like(values) if slopes is None else np.asarray(slopes, dtype=float).reshape(-1)
        if slopes.size != values.size:
            raise ValueError("need one slope per cell")
        self.breaks = breaks
        self.values = values
        self.slopes = slopes
        self.T = float(breaks[-1])

    @classmethod
    def constant(cls, value, T=1.0):
        return cls([0.0, T], [value])

    @classmethod
    def steps(cls, times, values, T=1.0):
        """Piecewise constant: ``values[0]`` before ``times[0]``, and so on."""
        return cls([0.0, *times, T], values)

    @classmethod
    def affine(cls, value0, slope, T=1.0):
        return cls([0.0, T], [value0], [slope])

    def _cell(self, t):
        j = int(np.searchsorted(self.breaks, t, side="right")) - 1
        return min(max(j, 0), self.values.size - 1)

    def _end_value(self, j):
        return self.values[j] + self.slopes[j] * (self.breaks[j + 1] - self.breaks[j])

    def __call__(self, t, side="raw"):
        t = float(t)
        if not (0.0 <= t <= self.T):
            raise ValueError(f"t={t} outside [0, {self.T}]")
        j = self._cell(t)
        if side == "left" and j > 0 and t == self.breaks[j]:
            return float(self._end_value(j - 1))
        return float(self.values[j] + self.slopes[j] * (t - self.breaks[j]))

    def derivative(self, t):
        return float(self.slopes[self._cell(float(t))])

    @property
    def jump_times(self):
        return tuple(float(b) for j, b in enumerate(self.breaks[1:-1], start=1)
                     if self.values[j] != self._end_value(j - 1))

    def jump_at(self, t):
        idx = np.flatnonzero(self.breaks[1:-1] == t)
        if idx.size == 0:
            return 0.0
        j = int(idx[0]) + 1
        return float(self.values[j] - self._end_value(j - 1))

    @property
    def is_continuous(self):
        return not self.jump_times

    def sup_abs(self):
        ends = [abs(self._end_value(j)) for j in range(self.values.size)]
        return float(max(np.abs(self.values).max(), max(ends)))

    def inf(self):
        ends = [self._end_value(j) for j in range(self.values.size)]
        return float(min(self.values.min(), min(ends)))

    def sup(self):
        ends = [self._end_value(j) for j in range(self.values.size)]
        return float(max(self.values.max(), max(ends)))

    def integral(self, a=0.0, b=None):
        """Exact ``int_a^b phi``."""
        b = self.T if b is None else b
        total = 0.0
        for j in range(self.values.size):
            lo, hi = max(a, self.breaks[j]), min(b, self.breaks[j + 1])
            if hi > lo:
                x0 = self.breaks[j]
                total += self.values[j] * (hi - lo) + 0.5 * self.slopes[j] * ((hi - x0) ** 2 - (lo - x0) ** 2)
        return float(total)

    def total_variation(self):
        jumps = sum(abs(self.jump_at(t)) for t in self.breaks[1:-1])
        return float(jumps + np.sum(np.abs(self.slopes) * np.diff(self.breaks)))

    def scaled(self, factor, shift=0.0):
        return PiecewiseAffine(self.breaks, factor * self.values + shift, factor * self.slopes)

    def _breakpoints(self):
        return self.breaks

    def _affine_at(self, s):
        if s <= 0.0:
            return self.values[0], 0.0
        if s >= self.T:
            return self._end_value(self.values.size - 1), 0.0
        j = self._cell(s)
        return self.values[j] + self.slopes[j] * (s - self.breaks[j]), self.slopes[j]

    def to_dict(self):
        return {"breaks": self.breaks.tolist(), "values": self.values.tolist(),
                "slopes": self.slopes.tolist()}

    @classmethod
    def from_dict(cls, data, T=None):
        if isinstance(data, (int, float)):
            return cls.constant(float(data), 1.0 if T is None else T)
        return cls(data["breaks"], data["values"], data.get("slopes"))

    def __repr__(self):
        return f"PiecewiseAffine(breaks={self.breaks.tolist()}, values={self.values.tolist()}, slopes={self.slopes.tolist()})"


@dataclass(frozen=True)
class BVModulus(_PiecewiseAffineLike):
    """Bounded non-decreasing modulus ``g`` on ``[0, T]``.

    ``g(t) = base + sum_{t_i <= t} s_i + int_0^t d``.
    """

    T: float
    base: float = 0.0
    jumps: tuple = ()
    density_breaks: tuple = ()
    density_values: tuple = ()
    _jt: np.ndarray = field(init=False, repr=False, compare=False)
    _js: np.ndarray = field(init=False, repr=False, compare=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        jumps = tuple((float(t), float(s)) for t, s in self.jumps)
        times = [t for t, _ in jumps]
        if any(not (0.0 < t <= self.T) for t in times):
            raise ValueError("jump locations must lie in (0, T]")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("jump locations must be strictly sorted")
        if any(s <= 0 for _, s in jumps):
            raise ValueError("jump sizes must be positive")
        object.__setattr__(self, "jumps", jumps)
        breaks = tuple(float(b) for b in self.density_breaks)
        values = tuple(float(v) for v in self.density_values)
        if breaks:
            if breaks[0] != 0.0 or not math.isclose(breaks[-1], self.T, rel_tol=0, abs_tol=1e-14 * self.T):
                raise ValueError("density breaks must span [0, T]")
            if any(b <= a for a, b in zip(breaks, breaks[1:])):
                raise ValueError("density breaks must be strictly increasing")
            if len(values) != len(breaks) - 1:
                raise ValueError("need one density value per cell")
            if any(v < 0 for v in values):
                raise ValueError("density must be nonnegative")
            breaks = breaks[:-1] + (float(self.T),)
        elif values:
            raise ValueError("density values given without breaks")
        object.__setattr__(self, "density_breaks", breaks)
        object.__setattr__(self, "density_values", values)
        object.__setattr__(self, "_jt", np.array(times, dtype=float))
        object.__setattr__(self, "_js", np.array([s for _, s in jumps], dtype=float))
        if breaks:
            cum = np.concatenate(([0.0], np.cumsum(np.diff(breaks) * np.array(values))))
        else:
            cum = np.zeros(1)
        object.__setattr__(self, "_cum", cum)

    # -- construction helpers -----------------------------------------
    @classmethod
    def constant(cls, value=0.0, T=1.0):
        return cls(T=T, base=value)

    @classmethod
    def linear(cls, rate, T=1.0, base=0.0):
        if rate == 0:
            return cls(T=T, base=base)
        return cls(T=T, base=base, density_breaks=(0.0, T), density_values=(rate,))

    def __add__(self, other):
        if not isinstance(other, BVModulus):
            return NotImplemented
        if not math.isclose(self.T, other.T):
            raise ValueError("moduli live on different horizons")
        acc = {}
        for t, s in self.jumps + other.jumps:
            acc[t] = acc.get(t, 0.0) + s
        breaks = sorted(set(self.density_breaks) | set(other.density_breaks))
        if breaks:
            mids = 0.5 * (np.array(breaks[:-1]) + np.array(breaks[1:]))
            values = [self.density(m) + other.density(m) for m in mids]
        else:
            values = []
        return BVModulus(T=self.T, base=self.base + other.base, jumps=tuple(sorted(acc.items())),
                         density_breaks=tuple(breaks), density_values=tuple(values))

    def scaled(self, factor):
        if factor < 0:
            raise ValueError("moduli can only be scaled by nonnegative factors")
        if factor == 0:
            return BVModulus(T=self.T, base=0.0)
        return BVModulus(T=self.T, base=factor * self.base,
                         jumps=tuple((t, factor * s) for t, s in self.jumps),
                         density_breaks=self.density_breaks,
                         density_values=tuple(factor * v for v in self.density_values))

    # -- evaluation ----------------------------------------------------
    def density(self, t):
        if not self.density_breaks or t < 0 or t > self.T:
            return 0.0
        j = int(np.searchsorted(self.density_breaks, t, side="right")) - 1
        j = min(max(j, 0), len(self.density_values) - 1)
        return self.density_values[j]

    def _absolutely_continuous(self, t):
        if not self.density_breaks:
            return 0.0
        t = min(max(t, 0.0), self.T)
        b = self.density_breaks
        j = int(np.searchsorted(b, t, side="right")) - 1
        j = min(max(j, 0), len(self.density_values) - 1)
        return float(self._cum[j] + self.density_values[j] * (t - b[j]))

    def eval(self, t, side="raw"):
        if side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")
        t = float(t)
        if not (0.0 <= t <= self.T):
            raise ValueError(f"t={t} outside [0, {self.T}]")
        if side == "left" or (side == "right" and t == self.T):
            jumps = self._js[self._jt < t].sum()
        else:
            jumps = self._js[self._jt <= t].sum()
        return float(self.base + jumps + self._absolutely_continuous(t))

    def __call__(self, t, side="raw"):
        return self.eval(t, side)

    @property
    def jump_times(self):
        return tuple(float(t) for t in self._jt)

    def total_variation(self):
        return float(self._js.sum() + self._cum[-1])

    def measure(self, a, b):
        """``mu_g((a, b]) = g+(b) - g+(a)``."""
        if not a < b:
            raise ValueError("measure needs a < b")
        return self.eval(b, "right") - self.eval(a, "right")

    # -- extension used by the kernel code ------------------------------
    def _breakpoints(self):
        return sorted(set(self.jump_times) | set(self.density_breaks) | {0.0, self.T})

    def _affine_at(self, s):
        jumps = self._js[self._jt <= s].sum()
        return self.base + jumps + self._absolutely_continuous(s), self.density(s)

    # -- serialization ------------------------------------------------
    def to_dict(self):
        return {"T": self.T, "base": self.base, "jumps": [list(j) for j in self.jumps],
                "density": {"breaks": list(self.density_breaks), "values": list(self.density_values)}}

    @classmethod
    def from_dict(cls, data):
        dens = data.get("density") or {}
        return cls(T=float(data["T"]), base=float(data.get("base", 0.0)),
                   jumps=tuple(tuple(j) for j in data.get("jumps", ())),
                   density_breaks=tuple(dens.get("breaks", ())),
                   density_values=tuple(dens.get("values", ())))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def dominating_modulus(groups, T):
    """Modulus dominating the increments of weighted groups of coefficients.

    ``groups`` is a list of ``(factor, coefficients)``.  Within a group the
    coefficients act on disjoint parts of the domain, so the increment is
    bounded by the pointwise maximum over the group; groups are summed.
    """
    total = BVModulus(T=T)
    for factor, coefs in groups:
        if factor == 0 or not coefs:
            continue
        breaks = sorted(set().union(*(set(c.breaks.tolist()) for c in coefs)))
        jumps = []
        for b in breaks[1:-1]:
            size = max(abs(c.jump_at(b)) for c in coefs)
            if size > 0:
                jumps.append((b, factor * size))
        mids = 0.5 * (np.array(breaks[:-1]) + np.array(breaks[1:]))
        dens = [factor * max(abs(c.derivative(m)) for c in coefs) for m in mids]
        if any(d > 0 for d in dens):
            part = BVModulus(T=T, jumps=tuple(jumps), density_breaks=tuple(breaks), density_values=tuple(dens))
        else:
            part = BVModulus(T=T, jumps=tuple(jumps))
        total = total + part
    return total


def eval(g, t, side="raw"):
    return g.eval(t, side)


def total_variation(g):
    return g.total_variation()


def measure(g, a, b):
    return g.measure(a, b)


def mollify_modulus(g, moll):
    """Smooth modulus ``g_n = rho_n * g`` (``g`` extended constantly outside ``[0, T]``)."""
    return g.mollified(moll)


def mollified_variation_bound(g, moll, samples=4001):
    """Return ``(int_0^T g_n', g(T) - g(0))``; the first never exceeds the second."""
    gn = mollify_modulus(g, moll)
    ts = np.linspace(0.0, g.T, samples)
    vals = np.array([gn(t) for t in ts])
    dq = np.diff(vals) / np.diff(ts)
    lhs = float(np.sum(dq * np.diff(ts)))
    return lhs, g.total_variation()


def stieltjes_integral(g, psi):
    """``int psi d mu_g`` for ``psi`` continuous with support in ``(0, T)``."""
    total = sum(s * psi(t) for t, s in g.jumps if t < g.T)
    for a, b, d in zip(g.density_breaks[:-1], g.density_breaks[1:], g.density_values):
        if d:
            total += d * scipy.integrate.quad(psi, a, b, limit=200)[0]
    return float(total)


def difference_quotient_integral(g, psi, h):
    """``int_0^T (g(t + h) - g(t)) / h * psi(t) dt`` with ``g`` extended constantly."""
    pts = np.asarray(g._breakpoints())
    cuts = np.unique(np.clip(np.concatenate((pts, pts - h, [0.0, g.T])), 0.0, g.T))

    def integrand(t):
        return (g._affine_at(t + h)[0] - g._affine_at(t)[0]) / h * psi(t)

    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b > a:
            # nudge inside so the piece formulas are used, not the jump values
            eps = 1e-15 * g.T
            total += scipy.integrate.quad(integrand, a + eps, b - eps, limit=200, epsabs=1e-13)[0]
    return float(total)
