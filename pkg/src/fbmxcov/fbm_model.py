"""Deterministic fractional-Brownian-motion quantities.

Fractional Brownian motion with Hurst index H is the centered Gaussian
process with covariance

    R_H(t, s) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2 .

For H > 1/2 this can be written as an absolutely convergent double
integral of the weight ``alpha_H * |tau - sigma|^{2H-2}`` with
``alpha_H = H (2H - 1)``, which also induces the weighted inner product
on step functions

    <f, g> = alpha_H int int f(tau) g(sigma) |tau - sigma|^{2H-2} dtau dsigma .

This module provides the closed-form scalar kernels (covariance,
correlation, the gamma weight arising from the iterated-integral
rearrangement of derivative kernels) and exact cell-pair integration of
the singular weight for piecewise-constant functions on a grid.  The
weight is singular but integrable on the diagonal (2H - 2 > -1), so
cell-pair rectangle integrals are evaluated from the closed-form double
antiderivative |x|^{2H} / (2H (2H-1)), with a series branch for
well-separated cells where the four-corner combination would cancel
catastrophically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HurstParameter",
    "TimeGrid",
    "GridFunction",
    "alpha_h",
    "covariance_rh",
    "correlation_rho",
    "gamma_kernel",
    "gamma_factorization_terms",
    "rect_weight_integral",
    "gram_matrix",
    "weighted_inner_product",
    "abs_h_norm",
    "indicator",
]


@dataclass(frozen=True)
class HurstParameter:
    """Validated Hurst index with its precomputed derived exponents.

    The covariance-formula machinery requires 1/2 < h < 1.  Limit studies
    down to (and including) the Brownian value h = 1/2 go through the
    :meth:`limit_study` constructor, which relaxes the lower bound.
    """

    h: float
    _allow_limit: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        h = float(self.h)
        lo_ok = h > 0.5 or (self._allow_limit and h >= 0.5)
        if not (lo_ok and h < 1.0):
            raise ValueError(
                f"Hurst parameter must lie in (1/2, 1); got {h!r}"
                + (" (limit constructor admits exactly 1/2)" if self._allow_limit else "")
            )
        object.__setattr__(self, "h", h)

    @classmethod
    def limit_study(cls, h):
        """Constructor admitting h = 1/2 exactly, for Brownian-limit studies."""
        return cls(h, _allow_limit=True)

    # Exponents appearing in every inner loop.
    @property
    def two_h(self):
        return 2.0 * self.h

    @property
    def two_h_m1(self):
        return 2.0 * self.h - 1.0

    @property
    def two_h_m2(self):
        return 2.0 * self.h - 2.0

    @property
    def alpha(self):
        """alpha_H = H (2H - 1); vanishes at the Brownian value."""
        return self.h * (2.0 * self.h - 1.0)


def _as_hurst(h) -> HurstParameter:
    return h if isinstance(h, HurstParameter) else HurstParameter(h)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing partition 0 = t_0 < ... < t_n = T of [0, T]."""

    nodes: np.ndarray

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("grid must start at 0")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, horizon, n_cells):
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        return cls(np.linspace(0.0, float(horizon), int(n_cells) + 1))

    @property
    def horizon(self):
        return float(self.nodes[-1])

    @property
    def n_cells(self):
        return self.nodes.size - 1

    @property
    def cell_widths(self):
        return np.diff(self.nodes)

    @property
    def midpoints(self):
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    @property
    def is_uniform(self):
        w = self.cell_widths
        return bool(np.allclose(w, w[0], rtol=1e-12, atol=0.0))

    def node_index(self, t, tol=1e-9):
        """Index of the node equal to t (within tol), or raise."""
        idx = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[idx] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"{t} is not a node of this grid")
        return idx


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-constant function on a grid: one value per cell."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_cells,):
            raise ValueError(
                f"values must have one entry per cell: expected {self.grid.n_cells}, got {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __abs__(self):
        return GridFunction(self.grid, np.abs(self.values))


def indicator(grid: TimeGrid, t_lo, t_hi=None) -> GridFunction:
    """Indicator of [t_lo, t_hi] (or of [0, t_lo] if t_hi is omitted) as a GridFunction.

    Both endpoints must be grid nodes.
    """
    if t_hi is None:
        t_lo, t_hi = 0.0, t_lo
    i = grid.node_index(t_lo)
    j = grid.node_index(t_hi)
    if j < i:
        raise ValueError("empty indicator interval")
    values = np.zeros(grid.n_cells)
    values[i:j] = 1.0
    return GridFunction(grid, values)


def alpha_h(h) -> float:
    """alpha_H = H (2H - 1), the constant weighting the singular kernel."""
    return _as_hurst(h).alpha


def covariance_rh(t, s, h):
    """fBm covariance R_H(t, s) = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2."""
    hp = _as_hurst(h)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    two_h = hp.two_h
    out = 0.5 * (np.abs(t) ** two_h + np.abs(s) ** two_h - np.abs(t - s) ** two_h)
    return out if out.ndim else float(out)


def correlation_rho(tau, sigma, h):
    """Correlation of (B_tau, B_sigma): R_H(tau, sigma) / (tau^H sigma^H).

    Lies in (0, 1]; equals 1 exactly when tau == sigma.  Zero times are a
    domain error (B_0 is degenerate).
    """
    hp = _as_hurst(h)
    tau_a = np.asarray(tau, dtype=float)
    sigma_a = np.asarray(sigma, dtype=float)
    if np.any(tau_a <= 0.0) or np.any(sigma_a <= 0.0):
        raise ValueError("correlation_rho requires strictly positive times")
    out = covariance_rh(tau_a, sigma_a, hp) / (tau_a**hp.h * sigma_a**hp.h)
    return out if np.ndim(out) else float(out)


def gamma_kernel(tau, sigma, h):
    """The nonnegative weight multiplying the derivative-pairing kernel.

    gamma(tau, sigma) = H/(2H-1) * [(tau v sigma)^{2H-1} - |tau-sigma|^{2H-1}]
                                 * [(tau ^ sigma)^{2H-1} + |tau-sigma|^{2H-1}]

    It arises from carrying out the two inner integrals of the weight
    against the indicator structure of the derivative kernels; it is
    symmetric, vanishes on the axes, and equals H/(2H-1) * t^{4H-2} on
    the diagonal.
    """
    hp = _as_hurst(h)
    if hp.two_h_m1 <= 0.0:
        raise ValueError("gamma_kernel requires H > 1/2")
    tau = np.asarray(tau, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    q = hp.two_h_m1
    d = np.abs(tau - sigma) ** q
    hi = np.maximum(tau, sigma) ** q
    lo = np.minimum(tau, sigma) ** q
    out = (hp.h / hp.two_h_m1) * (hi - d) * (lo + d)
    return out if out.ndim else float(out)


def gamma_factorization_terms(tau, sigma, h):
    """Closed forms of I1 = int_0^tau |u - sigma|^{2H-2} du and the symmetric I2.

    These are the two inner integrals whose product factorizes gamma:
    alpha_H^2 * I1 * I2 == alpha_H * gamma(tau, sigma).
    """
    hp = _as_hurst(h)
    q = hp.two_h_m1

    def one_sided(upper, ref):
        # int_0^upper |u - ref|^{2H-2} du via sgn(x)|x|^{2H-1}/(2H-1)
        a = np.sign(upper - ref) * np.abs(upper - ref) ** q
        b = ref**q  # -sgn(-ref)|ref|^{2H-1} for ref >= 0
        return (a + b) / q

    i1 = one_sided(np.asarray(tau, dtype=float), np.asarray(sigma, dtype=float))
    i2 = one_sided(np.asarray(sigma, dtype=float), np.asarray(tau, dtype=float))
    if np.ndim(i1) == 0:
        return float(i1), float(i2)
    return i1, i2


# ---------------------------------------------------------------------------
# Exact cell-pair integrals of the weight |tau - sigma|^{2H-2}
# ---------------------------------------------------------------------------

# Use the series branch once cells are separated by more than their joint
# extent; the four-corner second difference loses ~ (D/(u+v))^2 digits.
_SERIES_SEPARATION = 2.0
_SERIES_MAX_TERMS = 40


def _phi2(x, hp):
    """Double antiderivative of |x|^{2H-2}:  |x|^{2H} / (2H (2H-1))."""
    return np.abs(x) ** hp.two_h / (hp.two_h * hp.two_h_m1)


def _corner_combination(dist, u, v, hp):
    # int over [c1-u, c1+u] x [c2-v, c2+v] with |c1-c2| = dist, via the
    # four-corner evaluation of the double antiderivative.
    return (
        _phi2(dist + u + v, hp)
        - _phi2(dist + u - v, hp)
        - _phi2(dist - u + v, hp)
        + _phi2(dist - u - v, hp)
    )


def _series_combination(dist, u, v, hp):
    # Even-order Taylor expansion of the corner combination around dist:
    # sum_{m>=2 even} 2 phi2^{(m)}(dist)/m! [(u+v)^m - (u-v)^m].
    # phi2'' = |x|^{2H-2}, so the m = 2 term is the midpoint rule.
    dist = np.asarray(dist, dtype=float)
    p = np.abs(u + v) / dist
    q = np.abs(u - v) / dist
    base = dist**hp.two_h_m2 * dist * dist  # dist^{2H}
    # coeff_m = (2/m!) * prod_{k=2}^{m-1} (2H - k), starting at m = 2 with 1.
    total = np.zeros_like(dist)
    coeff = 1.0
    p_pow = p * p
    q_pow = q * q
    for m in range(2, _SERIES_MAX_TERMS + 1, 2):
        term = coeff * (p_pow - q_pow)
        total = total + term
        if np.all(np.abs(term) <= 1e-18 * np.abs(total) + 1e-300):
            break
        coeff *= (hp.two_h - m) * (hp.two_h - m - 1.0) / ((m + 1.0) * (m + 2.0))
        p_pow = p_pow * p * p
        q_pow = q_pow * q * q
    return base * total


def rect_weight_integral(a1, a2, b1, b2, h) -> float:
    """Exact integral of |tau - sigma|^{2H-2} over [a1, a2] x [b1, b2].

    No alpha_H factor.  Exact up to floating point; well-separated
    rectangles go through a cancellation-free series.
    """
    hp = _as_hurst(h)
    if not (a2 >= a1 and b2 >= b1):
        raise ValueError("degenerate rectangle")
    c1 = 0.5 * (a1 + a2)
    c2 = 0.5 * (b1 + b2)
    u = 0.5 * (a2 - a1)
    v = 0.5 * (b2 - b1)
    dist = abs(c1 - c2)
    if dist > _SERIES_SEPARATION * (u + v) and u + v > 0.0:
        return float(_series_combination(dist, u, v, hp))
    return float(_corner_combination(dist, u, v, hp))


def gram_matrix(grid: TimeGrid, h) -> np.ndarray:
    """Gram matrix of the cell indicators under the weighted inner product.

    W[i, j] = alpha_H * int over cell_i x cell_j of |tau - sigma|^{2H-2};
    symmetric positive definite.  O(n^2) storage.
    """
    hp = _as_hurst(h)
    mids = grid.midpoints
    half = 0.5 * grid.cell_widths
    dist = np.abs(mids[:, None] - mids[None, :])
    u = half[:, None] + 0.0 * half[None, :]
    v = half[None, :] + 0.0 * half[:, None]
    corner = _corner_combination(dist, u, v, hp)
    far = dist > _SERIES_SEPARATION * (u + v)
    if np.any(far):
        series = _series_combination(np.where(far, dist, 1.0), u, v, hp)
        corner = np.where(far, series, corner)
    w = hp.alpha * corner
    return 0.5 * (w + w.T)  # symmetrize away rounding asymmetry


def weighted_inner_product(f: GridFunction, g: GridFunction, h) -> float:
    """<f, g> = alpha_H * int int f(tau) g(sigma) |tau-sigma|^{2H-2}, exact per cell pair.

    Both functions must live on the same grid; the weight integrals over
    every cell pair are closed-form, so the only error is floating point.
    Satisfies <1_[0,t], 1_[0,s]> = R_H(t, s) at grid nodes.
    """
    if f.grid is not g.grid and not np.array_equal(f.grid.nodes, g.grid.nodes):
        raise ValueError("grid mismatch between f and g")
    w = gram_matrix(f.grid, h)
    return float(f.values @ w @ g.values)


def abs_h_norm(f: GridFunction, h) -> float:
    """Norm of |f| in the weighted function space: sqrt(<|f|, |f|>)."""
    return float(np.sqrt(weighted_inner_product(abs(f), abs(f), h)))
