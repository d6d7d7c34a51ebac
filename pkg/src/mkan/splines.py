"""Reference B-spline machinery: uniform knot grids and recursive basis evaluation.

This module is the correctness oracle for the whole package.  Basis functions
are evaluated with the classic Cox-De Boor recurrence, built bottom-up from
degree 0.  Everything here is deliberately plain; the fast evaluation path
lives in :mod:`mkan.matrix_eval` and is tested against this module.

Conventions (shared by both backends):

* Knot intervals are half-open ``[t_i, t_{i+1})``, except that an input equal
  to ``domain_hi`` belongs to the last interval, so the domain as a whole is
  closed on the right.
* Inputs outside ``[domain_lo, domain_hi]`` are clamped to the boundary before
  basis evaluation (derivatives are reported at the clamped point; callers
  that differentiate through a clamp must zero those entries themselves).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "KnotGrid",
    "make_uniform_grid",
    "cox_de_boor",
    "basis_row",
    "basis_rows",
    "basis_row_derivative",
    "basis_rows_derivative",
    "spline_values",
    "layer_basis",
]


@dataclass(frozen=True, eq=False)
class KnotGrid:
    """Extended uniform knot vector for degree-``k`` splines on ``G`` intervals.

    ``knots`` has length ``G + 2k + 1``: the domain is split into ``G`` uniform
    intervals and ``k`` extra knots continue the spacing past each end, which
    gives exactly ``G + k`` basis functions with support on the domain.
    """

    degree: int
    intervals: int
    domain_lo: float
    domain_hi: float
    knots: np.ndarray

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if self.intervals < 1:
            raise ValueError(f"intervals must be >= 1, got {self.intervals}")
        if not (np.isfinite(self.domain_lo) and np.isfinite(self.domain_hi)):
            raise ValueError("domain bounds must be finite")
        if not self.domain_lo < self.domain_hi:
            raise ValueError(
                f"domain_lo must be < domain_hi, got [{self.domain_lo}, {self.domain_hi}]"
            )
        knots = np.asarray(self.knots, dtype=np.float64)
        expected = self.intervals + 2 * self.degree + 1
        if knots.shape != (expected,):
            raise ValueError(f"expected {expected} knots, got shape {knots.shape}")
        if not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        h = (self.domain_hi - self.domain_lo) / self.intervals
        if abs(knots[self.degree] - self.domain_lo) > 1e-12:
            raise ValueError("knots[degree] must equal domain_lo")
        if abs(knots[self.degree + self.intervals] - self.domain_hi) > 1e-12:
            raise ValueError("knots[degree + intervals] must equal domain_hi")
        if np.max(np.abs(np.diff(knots) - h)) > 1e-12 * abs(h):
            raise ValueError("knot spacing must be uniform")
        knots.flags.writeable = False
        object.__setattr__(self, "knots", knots)

    @property
    def spacing(self) -> float:
        """Width of one knot interval."""
        return (self.domain_hi - self.domain_lo) / self.intervals

    @property
    def n_bases(self) -> int:
        """Number of basis functions supported on the domain (``G + k``)."""
        return self.intervals + self.degree

    @property
    def last_interval(self) -> int:
        """Knot-interval index of the rightmost domain interval."""
        return self.degree + self.intervals - 1


def make_uniform_grid(degree: int, intervals: int, lo: float, hi: float) -> KnotGrid:
    """Build the extended uniform knot grid for ``degree`` and ``intervals``.

    The interior knots come from ``np.linspace`` so the domain endpoints are
    hit exactly; ``degree`` extension knots continue the spacing beyond each
    end.
    """
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if intervals < 1:
        raise ValueError(f"intervals must be >= 1, got {intervals}")
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("domain bounds must be finite")
    if not lo < hi:
        raise ValueError(f"lo must be < hi, got [{lo}, {hi}]")
    h = (hi - lo) / intervals
    interior = np.linspace(lo, hi, intervals + 1)
    left = lo - h * np.arange(degree, 0, -1, dtype=np.float64)
    right = hi + h * np.arange(1, degree + 1, dtype=np.float64)
    knots = np.concatenate([left, interior, right])
    return KnotGrid(degree, intervals, float(lo), float(hi), knots)


# ---------------------------------------------------------------------------
# Core bottom-up evaluation.
#
# The helpers below accept a knot array shaped either [L] (one grid) or
# [F, L] (one grid per input feature, all sharing degree and interval count)
# and broadcast against inputs of shape [...] or [..., F] respectively.
# ---------------------------------------------------------------------------


def _degree_zero(knots: np.ndarray, xc: np.ndarray, hi, last_interval: int) -> np.ndarray:
    """Indicator bases B_{i,0} with the right-closed fix at the domain top."""
    xe = xc[..., None]
    b = ((knots[..., :-1] <= xe) & (xe < knots[..., 1:])).astype(np.float64)
    at_hi = xc == hi
    if np.any(at_hi):
        b[at_hi] = 0.0
        b[at_hi, last_interval] = 1.0
    return b


def _raise_degree(knots: np.ndarray, b: np.ndarray, d: int, xe: np.ndarray) -> np.ndarray:
    """One Cox-De Boor level: degree d-1 values -> degree d values."""
    left = (xe - knots[..., : -(d + 1)]) / (knots[..., d:-1] - knots[..., : -(d + 1)])
    right = (knots[..., d + 1 :] - xe) / (knots[..., d + 1 :] - knots[..., 1:-d])
    return left * b[..., :-1] + right * b[..., 1:]


def _basis_values(
    knots: np.ndarray, degree: int, x: np.ndarray, lo, hi, last_interval: int
) -> np.ndarray:
    xc = np.clip(x, lo, hi)
    b = _degree_zero(knots, xc, hi, last_interval)
    xe = xc[..., None]
    for d in range(1, degree + 1):
        b = _raise_degree(knots, b, d, xe)
    return b


def _basis_derivatives(
    knots: np.ndarray, degree: int, x: np.ndarray, lo, hi, last_interval: int
) -> np.ndarray:
    xc = np.clip(x, lo, hi)
    if degree == 0:
        return np.zeros(xc.shape + (knots.shape[-1] - 1,))
    b = _degree_zero(knots, xc, hi, last_interval)
    xe = xc[..., None]
    for d in range(1, degree):
        b = _raise_degree(knots, b, d, xe)
    # d/dx B_{i,k} = k * (B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1}))
    span_lo = knots[..., degree:-1] - knots[..., : -(degree + 1)]
    span_hi = knots[..., degree + 1 :] - knots[..., 1:-degree]
    return degree * (b[..., :-1] / span_lo - b[..., 1:] / span_hi)


def _check_finite(xs: np.ndarray) -> None:
    if not np.all(np.isfinite(xs)):
        raise ValueError("inputs must be finite")


def basis_rows(grid: KnotGrid, xs) -> np.ndarray:
    """All ``G + k`` basis values at each input; output shape ``xs.shape + (G+k,)``."""
    xs = np.asarray(xs, dtype=np.float64)
    _check_finite(xs)
    scalar = xs.ndim == 0
    x = np.atleast_1d(xs)
    out = _basis_values(
        grid.knots, grid.degree, x, grid.domain_lo, grid.domain_hi, grid.last_interval
    )
    return out[0] if scalar else out


def basis_row(grid: KnotGrid, x: float) -> np.ndarray:
    """Basis values at one point: vector of length ``G + k`` summing to 1."""
    return basis_rows(grid, float(x))


def basis_rows_derivative(grid: KnotGrid, xs) -> np.ndarray:
    """d/dx of every basis function at each input (zeros for degree 0)."""
    xs = np.asarray(xs, dtype=np.float64)
    _check_finite(xs)
    scalar = xs.ndim == 0
    x = np.atleast_1d(xs)
    out = _basis_derivatives(
        grid.knots, grid.degree, x, grid.domain_lo, grid.domain_hi, grid.last_interval
    )
    return out[0] if scalar else out


def basis_row_derivative(grid: KnotGrid, x: float) -> np.ndarray:
    return basis_rows_derivative(grid, float(x))


def cox_de_boor(grid: KnotGrid, i: int, k: int, x: float) -> float:
    """B_{i,k}(x) by the Cox-De Boor recurrence, evaluated bottom-up.

    This is the scalar reference the batched paths are pinned against:
    ``basis_row(grid, x)[i] == cox_de_boor(grid, i, grid.degree, x)`` bitwise
    for in-domain ``x``.  No clamping is applied here; outside the support
    ``[t_i, t_{i+k+1})`` the value is 0.  Terms with a zero denominator
    (repeated knots) are defined as 0.
    """
    t = grid.knots
    if k < 0:
        raise IndexError(f"degree must be >= 0, got {k}")
    if i < 0 or i + k + 1 > len(t) - 1:
        raise IndexError(f"basis index {i} out of range for degree {k}")
    x = float(x)
    if not np.isfinite(x):
        raise ValueError("x must be finite")
    last = grid.last_interval
    b = [
        1.0 if (t[j] <= x < t[j + 1]) or (x == grid.domain_hi and j == last) else 0.0
        for j in range(i, i + k + 1)
    ]
    for d in range(1, k + 1):
        nxt = []
        for j in range(i, i + k + 1 - d):
            dl = t[j + d] - t[j]
            dr = t[j + d + 1] - t[j + 1]
            left = (x - t[j]) / dl if dl != 0.0 else 0.0
            right = (t[j + d + 1] - x) / dr if dr != 0.0 else 0.0
            nxt.append(left * b[j - i] + right * b[j - i + 1])
        b = nxt
    return b[0]


def spline_values(grid: KnotGrid, coefficients, xs) -> np.ndarray:
    """Spline value(s) sum_i c_i B_i(x) via the recursive basis.

    ``coefficients`` may be a single length-``G+k`` vector or a stack of them
    with shape ``[E, G+k]``; the output is then ``xs.shape`` or
    ``xs.shape + (E,)``.
    """
    c = np.asarray(coefficients, dtype=np.float64)
    if c.shape[-1] != grid.n_bases:
        raise ValueError(f"expected {grid.n_bases} coefficients, got {c.shape[-1]}")
    rows = basis_rows(grid, xs)
    if c.ndim == 1:
        return rows @ c
    return rows @ c.T


def layer_basis(grids: Sequence[KnotGrid], X: np.ndarray, want_derivative: bool):
    """Basis rows for a layer: one grid per input feature, evaluated together.

    Parameters
    ----------
    grids : one KnotGrid per column of ``X`` (identical degree and intervals).
    X : array [n_samples, n_features].
    want_derivative : also return d/dx rows (None otherwise).

    Returns ``(rows, drows, clamped)`` with ``rows`` shaped
    ``[n_samples, n_features, G + k]`` and ``clamped`` marking inputs that
    fell outside their feature's domain.
    """
    X = np.asarray(X, dtype=np.float64)
    _check_finite(X)
    degree = grids[0].degree
    last = grids[0].last_interval
    knots = np.stack([g.knots for g in grids])
    lo = np.array([g.domain_lo for g in grids])
    hi = np.array([g.domain_hi for g in grids])
    rows = _basis_values(knots, degree, X, lo, hi, last)
    drows = _basis_derivatives(knots, degree, X, lo, hi, last) if want_derivative else None
    clamped = (X < lo) | (X > hi)
    return rows, drows, clamped
