"""Degree-indexed basis matrices for uniform B-splines, built once and cached.

On a uniform grid every spline segment of order ``p`` (degree ``p - 1``) is the
same polynomial in the local coordinate ``u``, up to which control points are
active.  That polynomial structure is captured by a single ``p x p`` matrix:
column ``j`` holds the coefficients (in powers of ``u``) of the ``j``-th active
basis function on the segment, so

    segment value = [1, u, ..., u^{p-1}] @ M @ [c_s, ..., c_{s+p-1}]^T.

The matrix is built by a recursion over orders.  Writing the order-``q``
matrix as ``N_q / (q-1)!`` with integer ``N_q``, one step inserts a row of
zeros above/below ``N_{q-1}`` and multiplies by two banded integer matrices::

    N_q = [N_{q-1}; 0] @ A + [0; N_{q-1}] @ B

where, for row r of the (q-1) x q bands,

    A[r, r] = r + 1      A[r, r + 1] = q - 2 - r
    B[r, r] = -1         B[r, r + 1] = 1

(A comes from the (x - t_i) blending term of the degree recurrence written in
``u``; B from the derivative-like (t - x) term.)  Keeping integer numerators
makes every matrix exact; division by ``(q-1)!`` happens once at the end.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BasisMatrix",
    "compute_basis_matrix",
    "cached_basis_matrix",
    "construction_count",
    "poly_mul_toeplitz",
]


@dataclass(frozen=True, eq=False)
class BasisMatrix:
    """Order-``p`` segment basis matrix.

    ``values`` is the p x p float matrix; ``numerators`` the exact integer
    matrix (dtype object — the entries outgrow int64 past order ~21) such
    that ``values == numerators / denominator`` with ``denominator == (p-1)!``.
    """

    order: int
    numerators: np.ndarray
    denominator: int
    values: np.ndarray

    def __post_init__(self) -> None:
        self.numerators.flags.writeable = False
        self.values.flags.writeable = False


def _integer_numerators(order: int) -> list[list[int]]:
    """Exact integer numerators of the order-``order`` matrix (over (order-1)!)."""
    num = [[1]]
    for q in range(2, order + 1):
        m = q - 1
        # banded step matrices, rows r = 0..q-2, columns 0..q-1
        a = [[0] * q for _ in range(m)]
        b = [[0] * q for _ in range(m)]
        for r in range(m):
            a[r][r] = r + 1
            a[r][r + 1] = q - 2 - r
            b[r][r] = -1
            b[r][r + 1] = 1
        top = num + [[0] * m]  # previous matrix with a zero row below
        bot = [[0] * m] + num  # and shifted one row down
        num = [
            [
                sum(top[i][l] * a[l][j] for l in range(m))
                + sum(bot[i][l] * b[l][j] for l in range(m))
                for j in range(q)
            ]
            for i in range(q)
        ]
    return num


def compute_basis_matrix(order: int) -> BasisMatrix:
    """Construct the order-``p`` basis matrix from scratch (order >= 1)."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    num = _integer_numerators(order)
    denom = math.factorial(order - 1)
    # big-int / big-int division rounds correctly, so each float entry is the
    # closest double to the exact rational even when numerators exceed 2^53
    values = np.array([[n / denom for n in row] for row in num], dtype=np.float64)
    num_arr = np.empty((order, order), dtype=object)
    for i, row in enumerate(num):
        for j, n in enumerate(row):
            num_arr[i, j] = n
    return BasisMatrix(order=order, numerators=num_arr, denominator=denom, values=values)


_cache: dict[int, BasisMatrix] = {}
_cache_lock = threading.Lock()
_constructions = 0


def cached_basis_matrix(order: int) -> BasisMatrix:
    """Like :func:`compute_basis_matrix`, constructing each order only once.

    Thread-safe: concurrent first requests for the same order are serialized
    so exactly one construction happens; the stored matrices are immutable.
    """
    got = _cache.get(order)
    if got is not None:
        return got
    with _cache_lock:
        got = _cache.get(order)
        if got is None:
            global _constructions
            got = compute_basis_matrix(order)
            _constructions += 1
            _cache[order] = got
    return got


def construction_count() -> int:
    """How many matrices :func:`cached_basis_matrix` has actually built."""
    return _constructions


def poly_mul_toeplitz(g, q) -> np.ndarray:
    """Product of two coefficient vectors via the lower-triangular Toeplitz form.

    The product polynomial g(x)q(x) equals T(g) @ [q; 0] where T(g) is the
    (m+n-1) x (m+n-1) lower-triangular Toeplitz matrix with first column g
    padded by zeros.  Equivalent to convolution; kept in matrix form because
    that is the shape the construction above composes with.
    """
    g = np.asarray(g, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if g.ndim != 1 or q.ndim != 1 or g.size == 0 or q.size == 0:
        raise ValueError("inputs must be non-empty 1-D coefficient vectors")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(q))):
        raise ValueError("coefficients must be finite")
    m, n = g.size, q.size
    out = m + n - 1
    i = np.arange(out)[:, None]
    j = np.arange(out)[None, :]
    d = i - j
    toeplitz = np.where((d >= 0) & (d < m), g[np.clip(d, 0, m - 1)], 0.0)
    qpad = np.concatenate([q, np.zeros(out - n)])
    return toeplitz @ qpad
