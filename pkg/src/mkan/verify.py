"""Self-check suites behind ``mkan verify``.

Five quick, seeded suites covering the package's core claims: the two
evaluation paths agree; basis rows form a partition of unity; the cached
matrices are exactly right at small orders and consistent with the recurrence
at every order; the Toeplitz polynomial product matches convolution; and the
hand-written gradients match finite differences.  The pytest suite runs the
same checks at larger scale — these exist so an installed copy can be audited
in seconds from the command line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kan, matrix_eval, splines, training
from .basis_matrix import cached_basis_matrix, poly_mul_toeplitz
from .splines import make_uniform_grid

__all__ = [
    "SuiteResult",
    "EXACT_SMALL_ORDER_NUMERATORS",
    "finite_difference_gradients",
    "check_partition_of_unity",
    "check_basis_matrix",
    "check_backend_equivalence",
    "check_toeplitz",
    "check_gradients",
    "run_all",
]


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str


# Exact integer numerators (over (order-1)!) for orders 1..5, frozen from an
# independent derivation: per-segment polynomial expansion of the recurrence
# in exact rational arithmetic, coefficients matched in the local coordinate.
EXACT_SMALL_ORDER_NUMERATORS = {
    1: [[1]],
    2: [[1, 0], [-1, 1]],
    3: [[1, 1, 0], [-2, 2, 0], [1, -2, 1]],
    4: [[1, 4, 1, 0], [-3, 0, 3, 0], [3, -6, 3, 0], [-1, 3, -3, 1]],
    5: [
        [1, 11, 11, 1, 0],
        [-4, -12, 12, 4, 0],
        [6, -6, -6, 6, 0],
        [-4, 12, -12, 4, 0],
        [1, -4, 6, -4, 1],
    ],
}


def check_partition_of_unity(max_degree=10, max_grid=64, samples=200, seed=0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    grids = sorted({g for g in (1, 2, 3, 5, 8, 13, 21, 34, 55, max_grid) if g <= max_grid})
    worst = 0.0
    for degree in range(min(max_degree, 10) + 1):
        for g in grids:
            grid = make_uniform_grid(degree, g, -1.0, 1.0)
            xs = rng.uniform(-1.0, 1.0, samples)
            rows = splines.basis_rows(grid, xs)
            if rows.min() < 0:
                return SuiteResult(
                    "partition-of-unity", False, f"negative basis value at degree {degree}, G={g}"
                )
            worst = max(worst, float(np.max(np.abs(rows.sum(axis=-1) - 1.0))))
    passed = worst <= 1e-12
    return SuiteResult("partition-of-unity", passed, f"max |sum - 1| = {worst:.2e}")


def check_basis_matrix(max_degree=12, samples=100, seed=0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    # exact small orders
    for order, expect in EXACT_SMALL_ORDER_NUMERATORS.items():
        got = cached_basis_matrix(order)
        if [[int(v) for v in row] for row in got.numerators] != expect:
            return SuiteResult("basis-matrix", False, f"order {order} numerators differ")
    # segment partition of unity for orders up to 13
    worst = 0.0
    for order in range(1, 14):
        psi = cached_basis_matrix(order)
        u = rng.random(samples)
        pb = np.ones((samples, order))
        if order > 1:
            pb[:, 1:] = u[:, None]
            np.cumprod(pb, axis=1, out=pb)
        worst = max(worst, float(np.max(np.abs((pb @ psi.values).sum(axis=1) - 1.0))))
    if worst > 1e-10:
        return SuiteResult("basis-matrix", False, f"segment partition error {worst:.2e}")
    # matrix reproduces the recurrence's active basis values on a segment
    worst_eq = 0.0
    for degree in range(min(max_degree, 12) + 1):
        grid = make_uniform_grid(degree, 4, -1.0, 1.0)
        psi = cached_basis_matrix(degree + 1)
        seg = int(rng.integers(0, grid.intervals))
        t_lo = grid.knots[degree + seg]
        for u in rng.random(8):
            x = t_lo + u * grid.spacing
            pb = np.ones(degree + 1)
            for r in range(1, degree + 1):
                pb[r] = pb[r - 1] * u
            local = pb @ psi.values
            oracle = [
                splines.cox_de_boor(grid, seg + j, degree, x) for j in range(degree + 1)
            ]
            worst_eq = max(worst_eq, float(np.max(np.abs(local - np.array(oracle)))))
    passed = worst_eq <= 1e-10
    return SuiteResult(
        "basis-matrix", passed, f"segment sum {worst:.2e}, recurrence diff {worst_eq:.2e}"
    )


def check_backend_equivalence(max_degree=12, max_grid=64, samples=200, seed=0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        degree = int(rng.integers(0, max_degree + 1))
        g = int(rng.integers(1, max_grid + 1))
        lo = float(rng.uniform(-2.0, 0.0))
        hi = lo + float(rng.uniform(0.5, 3.0))
        grid = make_uniform_grid(degree, g, lo, hi)
        coeffs = rng.normal(size=grid.n_bases)
        xs = rng.uniform(lo, hi, 1000)
        oracle = splines.spline_values(grid, coeffs, xs)
        fast = matrix_eval.spline_values(grid, coeffs, xs)
        worst = max(worst, float(np.max(np.abs(fast - oracle) / (1.0 + np.abs(oracle)))))
    passed = worst <= 1e-10
    return SuiteResult("backend-equivalence", passed, f"max relative diff = {worst:.2e}")


def check_toeplitz(pairs=1000, seed=0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        g = rng.normal(size=int(rng.integers(1, 17)))
        q = rng.normal(size=int(rng.integers(1, 17)))
        worst = max(worst, float(np.max(np.abs(poly_mul_toeplitz(g, q) - np.convolve(g, q)))))
    passed = worst <= 1e-12
    return SuiteResult("toeplitz", passed, f"max |toeplitz - convolution| = {worst:.2e}")


def finite_difference_gradients(model, X, Y, h=1e-5, backend=None) -> list[np.ndarray]:
    """Central finite differences of the MSE loss for every parameter array.

    Brutally direct (two forward passes per scalar parameter); intended for
    small models in tests and verification only.
    """
    backend = backend or model.spec.backend
    targets = np.asarray(Y, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]

    def loss() -> float:
        pred = kan.forward(model, X, backend)
        return float(np.mean((pred - targets) ** 2))

    out = []
    for arr in kan.parameter_arrays(model):
        grad = np.zeros_like(arr)
        flat, gflat = arr.ravel(), grad.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss()
            flat[j] = orig - h
            down = loss()
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        out.append(grad)
    return out


def check_gradients(seed=0, n_models=4) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for m in range(n_models):
        degree = int(rng.choice([2, 3, 4]))
        spec = kan.NetworkSpec(
            shape=(2, 3, 1), degree=degree, grid_size=3, seed=int(rng.integers(1 << 30))
        )
        model = kan.init_network(spec)
        X = rng.uniform(-1.0, 1.0, (16, 2))
        Y = rng.normal(size=(16, 1))
        for backend in kan.BACKENDS:
            analytic = training.backward(model, X, Y, backend)
            flat = []
            for g in analytic:
                flat.extend((g.coeffs, g.base_weight, g.spline_weight))
            numeric = finite_difference_gradients(model, X, Y, backend=backend)
            for a, f in zip(flat, numeric):
                err = float(np.max(np.abs(a - f) - (1e-4 * np.abs(f) + 1e-7)))
                worst = max(worst, err)
                if err > 0:
                    return SuiteResult(
                        "gradient-check",
                        False,
                        f"model {m} ({backend}) exceeds tolerance by {err:.2e}",
                    )
    return SuiteResult("gradient-check", True, f"{n_models} models x 2 backends within tolerance")


def run_all(max_degree=12, max_grid=64, samples=200, seed=0) -> list[SuiteResult]:
    return [
        check_partition_of_unity(min(max_degree, 10), max_grid, samples, seed),
        check_basis_matrix(max_degree, min(samples, 100), seed),
        check_backend_equivalence(max_degree, max_grid, samples, seed),
        check_toeplitz(1000, seed),
        check_gradients(seed),
    ]
