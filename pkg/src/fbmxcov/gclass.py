"""Coefficient functions with measure derivatives, and their mollifications.

The admissible coefficient class consists of functions decomposable as an
absolutely continuous part with bounded derivative plus a finite jump
part; the distributional derivative is then a measure

    F'(dx) = F_ac'(x) dx + sum_i  dx_i * delta_{a_i} .

Only finitely many jumps are supported (countable families with divergent
endpoints never arise in the experiments this library runs).

Mollification F_n = F * phi_n with the standard normalized bump
phi_1(x) = c exp(-1/(1-x^2)) on (-1, 1) turns jumps into steep ramps of
width 2/n.  Mollified functions are absolutely continuous (empty jump
list) but remember their structure: the ramp of each former jump and the
bump density it contributes to F_n' are kept as compactly supported
pieces, so that downstream Gaussian quadratures can resolve them exactly
instead of sampling blindly across a near-discontinuity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad

__all__ = [
    "GFunction",
    "DerivativeMeasure",
    "MollifierFamily",
    "LocalPiece",
    "QuadratureNonConvergence",
    "default_mollifier",
    "evaluate",
    "derivative_pairing",
    "linear_growth_bound",
    "mollify",
    "derivative_pairing_converges",
    "sgn_fn",
    "identity_fn",
    "constant_fn",
    "tanh_fn",
    "sin_fn",
    "step_fn",
    "gsum",
]


class QuadratureNonConvergence(RuntimeError):
    """Adaptive quadrature failed to meet tolerance; carries the achieved one."""

    def __init__(self, message, value, achieved_tol):
        super().__init__(f"{message} (achieved abs tolerance {achieved_tol:.3e})")
        self.value = value
        self.achieved_tol = achieved_tol


@dataclass(frozen=True)
class LocalPiece:
    """Bounded function supported on [lo, hi], with a declared sup bound."""

    lo: float
    hi: float
    fn: Callable
    bound: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        out = np.zeros_like(x)
        if np.any(inside):
            out[inside] = self.fn(x[inside])
        return out


@dataclass(frozen=True, eq=False)
class GFunction:
    """Coefficient function: absolutely continuous part + finite jumps.

    ``ac_value``/``ac_deriv`` hold the smooth part and its derivative
    density (both vectorized callables or None), ``ac_deriv_bound`` a
    declared sup bound for the derivative.  ``jumps`` is the sorted tuple
    of (location, jump size); ``base_value`` the limit of the jump part at
    -infinity.  Values follow the right-continuous convention at jump
    locations (the class is defined up to a.e. equality, so the choice is
    free and never affects any Gaussian expectation).

    The underscored fields carry the internal decomposition used by the
    bivariate-Gaussian pairing engine; plain functions have
    ``_steps == jumps`` and no local pieces, mollified ones the reverse.
    """

    ac_value: Callable | None = None
    ac_deriv: Callable | None = None
    ac_deriv_bound: float = 0.0
    jumps: tuple = ()
    base_value: float = 0.0
    label: str = ""
    _steps: tuple | None = field(default=None, repr=False)
    _loc_values: tuple = field(default=(), repr=False)
    _loc_derivs: tuple = field(default=(), repr=False)

    def __post_init__(self):
        jumps = tuple((float(a), float(dx)) for a, dx in self.jumps)
        locs = [a for a, _ in jumps]
        if any(b <= a for a, b in zip(locs, locs[1:])):
            raise ValueError("jump locations must be strictly increasing")
        object.__setattr__(self, "jumps", jumps)
        if (self.ac_value is None) != (self.ac_deriv is None):
            raise ValueError("ac_value and ac_deriv must be supplied together")
        if self._steps is None:
            object.__setattr__(self, "_steps", jumps)

    # -- evaluation ---------------------------------------------------------

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, self.base_value)
        if self._steps:
            locs = np.array([a for a, _ in self._steps])
            cum = np.concatenate([[0.0], np.cumsum([dx for _, dx in self._steps])])
            out = out + cum[np.searchsorted(locs, x, side="right")]
        for piece in self._loc_values:
            out = out + piece(x)
        if self.ac_value is not None:
            out = out + self.ac_value(x)
        return out if out.ndim else float(out)

    def total_ac_density(self, x):
        """The absolutely continuous part of F'(dx) as a density."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for piece in self._loc_derivs:
            out = out + piece(x)
        if self.ac_deriv is not None:
            out = out + self.ac_deriv(x)
        return out if out.ndim else float(out)

    @property
    def total_deriv_bound(self):
        return self.ac_deriv_bound + sum(p.bound for p in self._loc_derivs)

    @property
    def has_atoms(self):
        return bool(self.jumps)

    @property
    def total_jump_mass(self):
        return sum(abs(dx) for _, dx in self.jumps)

    def derivative_measure(self):
        return DerivativeMeasure(ac_density=self.total_ac_density, atoms=self.jumps)

    def __repr__(self):
        return f"GFunction({self.label or 'custom'})"


@dataclass(frozen=True, eq=False)
class DerivativeMeasure:
    """F'(dx) split into density and atoms; atoms mirror the parent's jumps."""

    ac_density: Callable
    atoms: tuple


# ---------------------------------------------------------------------------
# Standard coefficient functions
# ---------------------------------------------------------------------------


def sgn_fn():
    """sgn(x) as base -1 plus a jump of +2 at the origin."""
    return GFunction(jumps=((0.0, 2.0),), base_value=-1.0, label="sgn")


def identity_fn():
    return GFunction(ac_value=lambda x: np.asarray(x, dtype=float),
                     ac_deriv=lambda x: np.ones_like(np.asarray(x, dtype=float)),
                     ac_deriv_bound=1.0, label="id")


def constant_fn(c):
    return GFunction(base_value=float(c), label=f"const:{c:g}")


def _sech2(x):
    # overflow-safe 1/cosh^2
    e = np.exp(-2.0 * np.abs(np.asarray(x, dtype=float)))
    return 4.0 * e / (1.0 + e) ** 2


def tanh_fn():
    return GFunction(ac_value=np.tanh, ac_deriv=_sech2, ac_deriv_bound=1.0, label="tanh")


def sin_fn():
    return GFunction(ac_value=np.sin, ac_deriv=np.cos, ac_deriv_bound=1.0, label="sin")


def step_fn(pairs):
    """Pure jump function sum_i dx_i 1_{x >= a_i}, base value 0."""
    pairs = tuple(sorted((float(a), float(dx)) for a, dx in pairs))
    label = "steps:" + ",".join(f"{a:g}:{dx:g}" for a, dx in pairs)
    return GFunction(jumps=pairs, label=label)


def gsum(f: GFunction, g: GFunction):
    """Pointwise sum; jumps at shared locations merge."""
    merged = {}
    for a, dx in f.jumps + g.jumps:
        merged[a] = merged.get(a, 0.0) + dx
    jumps = tuple(sorted((a, dx) for a, dx in merged.items() if dx != 0.0))
    fv, gv = f.ac_value, g.ac_value
    fd, gd = f.ac_deriv, g.ac_deriv
    if fv is None and gv is None:
        ac_value = ac_deriv = None
    else:
        zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
        fv_, gv_ = fv or zero, gv or zero
        fd_, gd_ = fd or zero, gd or zero
        ac_value = lambda x: fv_(x) + gv_(x)
        ac_deriv = lambda x: fd_(x) + gd_(x)
    if f._loc_values or g._loc_values:
        raise ValueError("sum of mollified functions is not supported; mollify the sum instead")
    return GFunction(
        ac_value=ac_value,
        ac_deriv=ac_deriv,
        ac_deriv_bound=f.ac_deriv_bound + g.ac_deriv_bound,
        jumps=jumps,
        base_value=f.base_value + g.base_value,
        label=f"sum:({f.label})+({g.label})",
    )


# ---------------------------------------------------------------------------
# Mollifier
# ---------------------------------------------------------------------------

_GL64 = np.polynomial.legendre.leggauss(64)
_CDF_CELLS = 8192
_CDF_GL = np.polynomial.legendre.leggauss(12)


def _bump_raw(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (1.0 - xi * xi))
    return out


@dataclass(frozen=True, eq=False)
class MollifierFamily:
    """Scaled family phi_n(x) = n phi_1(n x) of an even unit-mass C^inf bump."""

    phi1: Callable
    support: float = 1.0

    def scaled(self, n):
        n = float(n)
        return lambda x: n * self.phi1(n * np.asarray(x, dtype=float))

    def mass(self, n=1, n_nodes=200):
        """Quadrature check of the unit mass of phi_n."""
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        half = self.support / float(n)
        y = half * x
        return float(np.sum(w * half * self.scaled(n)(y)))

    @property
    def peak(self):
        return float(self.phi1(0.0))

    def cdf(self, u):
        """int_{-support}^{u} phi_1, via a dense precomputed table."""
        table = _cdf_table(self)
        u = np.asarray(u, dtype=float)
        out = np.interp(u, table[0], table[1])
        return out if out.ndim else float(out)


_CDF_CACHE = {}


def _cdf_table(family):
    key = id(family.phi1)
    if key not in _CDF_CACHE:
        s = family.support
        edges = np.linspace(-s, s, _CDF_CELLS + 1)
        gx, gw = _CDF_GL
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        nodes = mid[:, None] + half[:, None] * gx[None, :]
        cell = np.sum(family.phi1(nodes) * gw[None, :], axis=1) * half
        cum = np.concatenate([[0.0], np.cumsum(cell)])
        _CDF_CACHE[key] = (edges, cum)
    return _CDF_CACHE[key]


def default_mollifier():
    """The normalized standard bump exp(-1/(1-x^2)) on (-1, 1)."""
    x, w = np.polynomial.legendre.leggauss(400)
    z = float(np.sum(w * _bump_raw(x)))
    return MollifierFamily(phi1=lambda y: _bump_raw(y) / z)


_DEFAULT_FAMILY = None


def _default_family():
    global _DEFAULT_FAMILY
    if _DEFAULT_FAMILY is None:
        _DEFAULT_FAMILY = default_mollifier()
    return _DEFAULT_FAMILY


def _convolve(fn, n, family):
    # (fn * phi_n)(x) by fixed Gauss-Legendre over the bump support; fn smooth.
    gx, gw = _GL64
    half = family.support / float(n)
    y = half * gx
    wts = gw * half * family.scaled(n)(y)

    def conv(x):
        x = np.asarray(x, dtype=float)
        return np.tensordot(fn(x[..., None] - y), wts, axes=([-1], [0]))

    return conv


def mollify(F: GFunction, n, family: MollifierFamily | None = None) -> GFunction:
    """F * phi_n as a purely absolutely continuous GFunction.

    Jumps become ramps dx * C(n (x - a)) with C the bump CDF; their
    derivative contributions dx * phi_n(x - a) are kept as compactly
    supported pieces.  The declared derivative bound of the result is
    sup|F_ac'| + n * phi_1(0) * sum|dx_i|.
    """
    family = family or _default_family()
    if F._loc_values or F._loc_derivs:
        raise ValueError("re-mollification is not supported")
    n = int(n)
    if n <= 0:
        raise ValueError("mollification level must be a positive integer")
    half = family.support / n

    ramps = []
    bumps = []
    for a, dx in F.jumps:
        def ramp(x, a=a, dx=dx):
            # correction to the sharp step: dx * (C(n(x-a)) - 1_{x>=a})
            x = np.asarray(x, dtype=float)
            return dx * (family.cdf(n * (x - a)) - (x >= a))

        def bump_density(x, a=a, dx=dx):
            return dx * family.scaled(n)(np.asarray(x, dtype=float) - a)

        ramps.append(LocalPiece(a - half, a + half, ramp, abs(dx)))
        bumps.append(LocalPiece(a - half, a + half, bump_density, abs(dx) * n * family.peak))

    ac_value = _convolve(F.ac_value, n, family) if F.ac_value is not None else None
    ac_deriv = _convolve(F.ac_deriv, n, family) if F.ac_deriv is not None else None

    return GFunction(
        ac_value=ac_value,
        ac_deriv=ac_deriv,
        ac_deriv_bound=F.ac_deriv_bound,
        jumps=(),
        base_value=F.base_value,
        label=f"mollify({F.label or 'custom'},{n})",
        _steps=F.jumps,
        _loc_values=tuple(ramps),
        _loc_derivs=tuple(bumps),
    )


# ---------------------------------------------------------------------------
# Pairings and bounds
# ---------------------------------------------------------------------------


def evaluate(F: GFunction, x):
    """F(x) under the right-continuous convention at jump locations."""
    return F(x)


def _quad_ac(fn, breakpoints, rtol=1e-10):
    """Adaptive integral of fn over the real line, split at breakpoints."""
    pts = sorted(set(float(b) for b in breakpoints))
    pieces = []
    if pts:
        segments = [(-np.inf, pts[0])] + list(zip(pts, pts[1:])) + [(pts[-1], np.inf)]
    else:
        segments = [(-np.inf, np.inf)]
    total, err = 0.0, 0.0
    for lo, hi in segments:
        val, abserr = quad(fn, lo, hi, epsabs=1e-12, epsrel=rtol, limit=200)
        total += val
        err += abserr
    return total, err


def derivative_pairing(F: GFunction, h, rtol=1e-9) -> float:
    """int h dF' = int h(x) F_ac'(x) dx + sum_i dx_i h(a_i).

    h must be continuous, vanishing at infinity and absolutely integrable
    (caller-asserted); the density part uses adaptive quadrature split at
    the supports of any mollified pieces.
    """
    atom_part = sum(dx * float(h(a)) for a, dx in F.jumps)
    breaks = []
    for p in F._loc_derivs:
        breaks.extend((p.lo, p.hi))
    has_density = F.ac_deriv is not None or F._loc_derivs
    if not has_density:
        return atom_part
    fn = lambda x: float(np.asarray(h(x)) * F.total_ac_density(np.asarray(x, dtype=float)))
    val, err = _quad_ac(fn, breaks, rtol=rtol)
    if err > max(1e-8, rtol * 10 * abs(val) + 1e-10):
        raise QuadratureNonConvergence("derivative pairing quadrature did not converge",
                                       atom_part + val, err)
    return atom_part + val


def linear_growth_bound(F: GFunction) -> float:
    """A constant M with |F(x)|, |F_n(x)| <= M (1 + |x|) for every mollification.

    Valid, not minimal: M = |F(0)| + sup|F_ac'| + sum|dx_i| + |base value|.
    """
    return abs(float(F(0.0))) + F.ac_deriv_bound + F.total_jump_mass + abs(F.base_value)


@dataclass(frozen=True)
class PairingConvergenceReport:
    levels: tuple
    values: tuple
    limit: float
    deviations: tuple
    max_tail_deviation: float


def derivative_pairing_converges(F, h, family=None, n_list=(4, 16, 64, 256)):
    """Sequence int h F_n' dx for mollification levels n, against int h dF'."""
    family = family or _default_family()
    limit = derivative_pairing(F, h)
    values = []
    for n in n_list:
        Fn = mollify(F, n, family)
        values.append(derivative_pairing(Fn, h))
    deviations = tuple(abs(v - limit) for v in values)
    tail = deviations[len(deviations) // 2:]
    return PairingConvergenceReport(
        levels=tuple(n_list),
        values=tuple(values),
        limit=limit,
        deviations=deviations,
        max_tail_deviation=max(tail),
    )
