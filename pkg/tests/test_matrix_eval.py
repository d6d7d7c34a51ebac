"""Matrix-path evaluation: interval lookup, power bases, dense rows, segment path.

The reference implementation for everything here is the recursive module;
these tests mostly assert agreement with it plus the handful of closed-form
values small cases admit.
"""

import numpy as np
import pytest

from mkan import matrix_eval, splines
from mkan.basis_matrix import cached_basis_matrix
from mkan.matrix_eval import (
    SEGMENT_MAX_INTERVALS,
    basis_output_derivatives,
    basis_outputs,
    layer_basis,
    layer_spline,
    layer_spline_backward,
    locate_intervals,
    power_bases,
    spline_outputs,
    spline_values,
)
from mkan.splines import make_uniform_grid


def random_layer(rng, in_dim, out_dim, degree, g, lo=-1.0, hi=1.0):
    grids = [make_uniform_grid(degree, g, lo, hi) for _ in range(in_dim)]
    coeffs = rng.standard_normal((out_dim, in_dim, g + degree))
    return grids, coeffs


# ------------------------------------------------------------ interval lookup


def test_locate_interior_point():
    grid = make_uniform_grid(3, 4, -1.0, 1.0)
    locs = locate_intervals(grid, np.array([0.3]))
    assert locs.segment_index[0] == 2
    assert locs.u[0] == pytest.approx(0.6)
    assert not locs.clamped[0]


def test_locate_domain_endpoints():
    grid = make_uniform_grid(2, 4, -1.0, 1.0)
    locs = locate_intervals(grid, np.array([-1.0, 1.0]))
    assert locs.segment_index[0] == 0 and locs.u[0] == 0.0
    # right endpoint folds into the last interval with u = 1
    assert locs.segment_index[1] == 3 and locs.u[1] == pytest.approx(1.0)


def test_locate_clamps_and_flags():
    grid = make_uniform_grid(3, 4, -1.0, 1.0)
    locs = locate_intervals(grid, np.array([-5.0, 0.0, 5.0]))
    np.testing.assert_array_equal(locs.clamped, [True, False, True])
    assert locs.segment_index[0] == 0 and locs.u[0] == 0.0
    assert locs.segment_index[2] == 3 and locs.u[2] == pytest.approx(1.0)


def test_locate_segment_knot_spans():
    grid = make_uniform_grid(2, 5, 0.0, 10.0)
    locs = locate_intervals(grid, np.array([3.7]))
    assert locs.t_lo[0] == pytest.approx(2.0)
    assert locs.t_hi[0] == pytest.approx(4.0)


def test_locate_rejects_non_finite():
    grid = make_uniform_grid(3, 4, -1.0, 1.0)
    with pytest.raises(ValueError):
        locate_intervals(grid, np.array([0.0, np.inf]))


# ---------------------------------------------------------------- power bases


def test_power_bases_values():
    grid = make_uniform_grid(2, 2, 0.0, 1.0)
    locs = locate_intervals(grid, np.array([0.25, 0.0, 1.0]))
    pb = power_bases(locs, 2)
    np.testing.assert_allclose(pb[0], [1.0, 0.5, 0.25])
    np.testing.assert_allclose(pb[1], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(pb[2], [1.0, 1.0, 1.0])


def test_power_bases_first_column_is_one():
    grid = make_uniform_grid(5, 7, -2.0, 2.0)
    locs = locate_intervals(grid, np.random.default_rng(0).uniform(-2, 2, 64))
    pb = power_bases(locs, 5)
    assert pb.shape == (64, 6)
    np.testing.assert_array_equal(pb[:, 0], 1.0)


# ------------------------------------------------------------------ dense rows


def test_basis_outputs_degree0():
    grid = make_uniform_grid(0, 2, 0.0, 1.0)
    locs = locate_intervals(grid, np.array([0.25, 0.75]))
    rows = basis_outputs(locs, power_bases(locs, 0), cached_basis_matrix(1), grid)
    np.testing.assert_allclose(rows, [[1.0, 0.0], [0.0, 1.0]])


def test_basis_outputs_degree1_midpoint():
    grid = make_uniform_grid(1, 2, 0.0, 1.0)
    locs = locate_intervals(grid, np.array([0.25]))
    rows = basis_outputs(locs, power_bases(locs, 1), cached_basis_matrix(2), grid)
    np.testing.assert_allclose(rows[0], [0.5, 0.5, 0.0])


@pytest.mark.parametrize("degree,g", [(0, 1), (1, 3), (2, 5), (3, 2), (7, 4), (12, 6)])
def test_rows_match_recursive_rows(degree, g):
    rng = np.random.default_rng(degree + 10 * g)
    grid = make_uniform_grid(degree, g, -1.0, 1.0)
    xs = np.concatenate([rng.uniform(-1, 1, 60), [-1.0, 1.0]])
    locs = locate_intervals(grid, xs)
    rows = basis_outputs(locs, power_bases(locs, degree), cached_basis_matrix(degree + 1), grid)
    ref = splines.basis_rows(grid, xs)
    np.testing.assert_allclose(rows, ref, atol=1e-10)


def test_rows_scatter_is_contiguous():
    grid = make_uniform_grid(3, 8, -1.0, 1.0)
    xs = np.random.default_rng(5).uniform(-1, 1, 40)
    locs = locate_intervals(grid, xs)
    rows = basis_outputs(locs, power_bases(locs, 3), cached_basis_matrix(4), grid)
    for i in range(len(xs)):
        nz = np.nonzero(rows[i])[0]
        assert len(nz) <= 4
        assert nz[0] >= locs.segment_index[i]
        assert nz[-1] <= locs.segment_index[i] + 3


@pytest.mark.parametrize("degree,g", [(1, 4), (2, 3), (3, 6), (6, 2)])
def test_row_derivatives(degree, g):
    rng = np.random.default_rng(degree * 7 + g)
    grid = make_uniform_grid(degree, g, -1.0, 1.0)
    xs = rng.uniform(-0.95, 0.95, 50)
    locs = locate_intervals(grid, xs)
    pb = power_bases(locs, degree)
    psi = cached_basis_matrix(degree + 1)
    drows = basis_output_derivatives(locs, pb, psi, grid)
    np.testing.assert_allclose(drows, splines.basis_rows_derivative(grid, xs), atol=1e-8)
    h = 1e-6
    fd = (splines.basis_rows(grid, xs + h) - splines.basis_rows(grid, xs - h)) / (2 * h)
    np.testing.assert_allclose(drows, fd, atol=1e-5)


def test_degree0_derivatives_are_zero():
    grid = make_uniform_grid(0, 5, -1.0, 1.0)
    locs = locate_intervals(grid, np.linspace(-1, 1, 9))
    drows = basis_output_derivatives(locs, power_bases(locs, 0), cached_basis_matrix(1), grid)
    np.testing.assert_array_equal(drows, 0.0)


# --------------------------------------------------------------- spline values


def test_spline_outputs_constant():
    grid = make_uniform_grid(3, 4, -1.0, 1.0)
    xs = np.linspace(-1, 1, 21)
    locs = locate_intervals(grid, xs)
    rows = basis_outputs(locs, power_bases(locs, 3), cached_basis_matrix(4), grid)
    np.testing.assert_allclose(spline_outputs(rows, np.full(7, -1.25)), -1.25, atol=1e-12)


def test_spline_values_linear_midpoint():
    grid = make_uniform_grid(1, 1, 0.0, 1.0)
    ys = spline_values(grid, np.array([0.0, 1.0]), np.array([0.5]))
    assert ys[0] == pytest.approx(0.5)


@pytest.mark.parametrize("degree", [0, 1, 2, 3, 5, 9])
def test_spline_values_match_recursive(degree):
    rng = np.random.default_rng(degree)
    for g in (1, 2, 4, 11):
        grid = make_uniform_grid(degree, g, -1.0, 1.0)
        coeffs = rng.standard_normal(g + degree)
        xs = rng.uniform(-1.0, 1.0, 50)
        got = spline_values(grid, coeffs, xs)
        want = splines.spline_values(grid, coeffs, xs)
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_batch_equals_per_sample():
    grid = make_uniform_grid(3, 5, -1.0, 1.0)
    rng = np.random.default_rng(2)
    coeffs = rng.standard_normal(8)
    xs = rng.uniform(-1, 1, 12)
    batched = spline_values(grid, coeffs, xs)
    singles = np.array([spline_values(grid, coeffs, np.array([x]))[0] for x in xs])
    # BLAS picks different kernels by batch size, so allow a couple of ulps
    np.testing.assert_allclose(batched, singles, rtol=0, atol=1e-14)


def test_no_recursion_at_evaluation_time(monkeypatch):
    """Matrix-path evaluation must never fall back to the recurrence."""

    def boom(*a, **k):
        raise AssertionError("recursive evaluation invoked from the matrix path")

    monkeypatch.setattr(splines, "cox_de_boor", boom)
    monkeypatch.setattr(splines, "basis_rows", boom)
    grid = make_uniform_grid(3, 4, -1.0, 1.0)
    rng = np.random.default_rng(0)
    spline_values(grid, rng.standard_normal(7), rng.uniform(-1, 1, 10))
    grids, coeffs = random_layer(rng, 2, 3, 3, 3)
    layer_basis(grids, rng.uniform(-1, 1, (6, 2)), True)
    Y, cache = layer_spline(grids, coeffs, rng.uniform(-1, 1, (6, 2)), need_input_grad=True)
    layer_spline_backward(cache, rng.standard_normal(Y.shape), True)


# -------------------------------------------------- fused small-grid path


def dense_reference(grids, coeffs, X, g):
    """Forward values and both gradients computed from dense rows only."""
    rows, drows, clamped = layer_basis(grids, X, True)
    Y = np.einsum("nib,oib->no", rows, coeffs)
    gi = np.einsum("no,nib->oib", g, rows)
    dval = np.einsum("oib,nib->nio", coeffs, drows)
    dx = np.einsum("nio,no->ni", dval, g)
    dx[clamped] = 0.0
    return Y, gi, dx


@pytest.mark.parametrize("g", [1, 2, 3, 4])
@pytest.mark.parametrize("degree", [0, 1, 3, 7])
def test_segment_path_matches_dense_rows(g, degree):
    rng = np.random.default_rng(100 * g + degree)
    grids, coeffs = random_layer(rng, 3, 2, degree, g)
    X = np.concatenate([rng.uniform(-1, 1, (40, 3)), [[-1.0, 1.0, 0.0]]])
    Y, cache = layer_spline(grids, coeffs, X, need_input_grad=True)
    gout = rng.standard_normal(Y.shape)
    gi, dx = layer_spline_backward(cache, gout, True)
    Y_ref, gi_ref, dx_ref = dense_reference(grids, coeffs, X, gout)
    np.testing.assert_allclose(Y, Y_ref, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(gi, gi_ref, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(dx, dx_ref, rtol=1e-12, atol=1e-12)


def test_segment_path_single_interval_has_no_masks():
    rng = np.random.default_rng(3)
    grids, coeffs = random_layer(rng, 2, 2, 3, 1)
    _, cache = layer_spline(grids, coeffs, rng.uniform(-1, 1, (8, 2)))
    assert cache.cmask is None


def test_segment_path_clamps_input_gradients():
    rng = np.random.default_rng(4)
    grids, coeffs = random_layer(rng, 1, 1, 3, 2)
    X = np.array([[-3.0], [0.1], [3.0]])
    Y, cache = layer_spline(grids, coeffs, X, need_input_grad=True)
    _, dx = layer_spline_backward(cache, np.ones_like(Y), True)
    assert dx[0, 0] == 0.0 and dx[2, 0] == 0.0 and dx[1, 0] != 0.0


def test_segment_backward_without_cached_clamp_rejected():
    rng = np.random.default_rng(5)
    grids, coeffs = random_layer(rng, 2, 2, 2, 3)
    Y, cache = layer_spline(grids, coeffs, rng.uniform(-1, 1, (4, 2)))
    with pytest.raises(ValueError):
        layer_spline_backward(cache, np.ones_like(Y), True)


def test_segment_path_coefficient_grad_without_input_grad():
    rng = np.random.default_rng(6)
    grids, coeffs = random_layer(rng, 2, 3, 3, 4)
    X = rng.uniform(-1, 1, (16, 2))
    Y, cache = layer_spline(grids, coeffs, X)
    gout = rng.standard_normal(Y.shape)
    gi, dx = layer_spline_backward(cache, gout, False)
    assert dx is None
    _, gi_ref, _ = dense_reference(grids, coeffs, X, gout)
    np.testing.assert_allclose(gi, gi_ref, rtol=1e-12, atol=1e-12)


def test_workspace_buffers_are_reused():
    rng = np.random.default_rng(7)
    grids, coeffs = random_layer(rng, 2, 2, 3, 3)
    ws = {}
    X = rng.uniform(-1, 1, (32, 2))
    _, c1 = layer_spline(grids, coeffs, X, workspace=ws)
    pb_first = c1.pb
    _, c2 = layer_spline(grids, coeffs, X, workspace=ws)
    # same backing buffers, so the second call recycles instead of reallocating
    assert c2.pb is pb_first
    assert len(ws) > 0


def test_workspace_respects_shape_changes():
    rng = np.random.default_rng(8)
    grids, coeffs = random_layer(rng, 2, 2, 3, 3)
    ws = {}
    Xa = rng.uniform(-1, 1, (32, 2))
    Xb = rng.uniform(-1, 1, (9, 2))
    Ya, _ = layer_spline(grids, coeffs, Xa, workspace=ws)
    Yb, _ = layer_spline(grids, coeffs, Xb, workspace=ws)
    Yb_fresh, _ = layer_spline(grids, coeffs, Xb)
    np.testing.assert_array_equal(Yb, Yb_fresh)
    Ya_again, _ = layer_spline(grids, coeffs, Xa, workspace=ws)
    np.testing.assert_array_equal(Ya, Ya_again)


def test_dispatch_threshold_is_sane():
    # the fused path exists for small grids; make sure the boundary constant
    # stays in the range the rest of the suite exercises
    assert 1 <= SEGMENT_MAX_INTERVALS <= 16


def test_segment_path_rejects_non_finite():
    rng = np.random.default_rng(9)
    grids, coeffs = random_layer(rng, 2, 2, 3, 2)
    X = rng.uniform(-1, 1, (4, 2))
    X[1, 0] = np.nan
    with pytest.raises(ValueError):
        layer_spline(grids, coeffs, X)
