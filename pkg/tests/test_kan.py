"""Network assembly: init, forward, grid adaptation, refinement, model files."""

import logging

import numpy as np
import pytest

from mkan import kan
from mkan.kan import (
    BACKENDS,
    Model,
    NetworkSpec,
    SPLINE_GAIN,
    forward,
    init_network,
    layer_forward,
    load_model,
    parameter_arrays,
    refine_grid,
    save_model,
    silu,
    silu_derivative,
    update_grid_from_samples,
)


def small_model(shape=(2, 5, 1), degree=3, g=5, seed=0, **kw):
    return init_network(NetworkSpec(shape=shape, degree=degree, grid_size=g, seed=seed, **kw))


# ------------------------------------------------------------------------ silu


def test_silu_values():
    assert silu(np.array([0.0]))[0] == 0.0
    x = np.array([10.0, -10.0, 1.0])
    np.testing.assert_allclose(silu(x), x / (1 + np.exp(-x)), rtol=1e-12)


def test_silu_derivative_matches_finite_differences():
    x = np.linspace(-4, 4, 33)
    h = 1e-6
    fd = (silu(x + h) - silu(x - h)) / (2 * h)
    np.testing.assert_allclose(silu_derivative(x), fd, atol=1e-8)


# ------------------------------------------------------------------------ init


def test_init_shapes():
    m = small_model(shape=(2, 5, 3), degree=3, g=5)
    assert len(m.layers) == 2
    first, second = m.layers
    assert first.coeffs.shape == (5, 2, 8)
    assert second.coeffs.shape == (3, 5, 8)
    assert first.base_weight.shape == (5, 2)
    assert len(first.grids) == 2 and len(second.grids) == 5
    for grid in first.grids:
        assert (grid.domain_lo, grid.domain_hi) == (-1.0, 1.0)


def test_init_weight_values():
    m = small_model()
    for layer in m.layers:
        np.testing.assert_array_equal(layer.base_weight, 1.0)
        np.testing.assert_array_equal(layer.spline_weight, SPLINE_GAIN)
        # coefficients start as small noise so early outputs are base-driven
        assert np.abs(layer.coeffs).max() < 0.5


def test_init_is_deterministic():
    a = small_model(seed=7)
    b = small_model(seed=7)
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(la.coeffs, lb.coeffs)
    c = small_model(seed=8)
    assert not np.array_equal(a.layers[0].coeffs, c.layers[0].coeffs)


def test_init_independent_of_backend():
    a = init_network(NetworkSpec(shape=(2, 4, 1), seed=3, backend="recursive"))
    b = init_network(NetworkSpec(shape=(2, 4, 1), seed=3, backend="matrix"))
    for la, lb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(la.coeffs, lb.coeffs)


def test_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec(shape=(4,))
    with pytest.raises(ValueError):
        NetworkSpec(shape=(2, 0, 1))
    with pytest.raises(ValueError):
        NetworkSpec(shape=(2, 1), degree=-1)
    with pytest.raises(ValueError):
        NetworkSpec(shape=(2, 1), grid_size=0)
    with pytest.raises(ValueError):
        NetworkSpec(shape=(2, 1), backend="gpu")
    with pytest.raises(ValueError):
        NetworkSpec(shape=(2, 1), base_function="relu")
    with pytest.raises(ValueError):
        NetworkSpec(shape=(2, 1), grid_eps=1.5)


# --------------------------------------------------------------------- forward


def test_layer_forward_all_zero_parameters():
    m = small_model(shape=(3, 2), g=4)
    layer = m.layers[0]
    layer.coeffs[:] = 0.0
    layer.base_weight[:] = 0.0
    x = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    for backend in BACKENDS:
        np.testing.assert_array_equal(layer_forward(layer, x, backend), 0.0)


def test_layer_forward_constant_splines_add_up():
    # two inputs, no base branch, every edge pinned to the constant 0.75:
    # the output is the plain sum over incoming edges
    m = small_model(shape=(2, 1), g=5, base_function="none")
    layer = m.layers[0]
    layer.coeffs[:] = 0.75
    layer.spline_weight[:] = 1.0
    x = np.random.default_rng(1).uniform(-1, 1, (20, 2))
    for backend in BACKENDS:
        out = layer_forward(layer, x, backend, base_function="none")
        np.testing.assert_allclose(out, 2 * 0.75, atol=1e-12)


@pytest.mark.parametrize("g", [1, 3, 4, 5, 12])
def test_layer_backends_agree(g):
    rng = np.random.default_rng(g)
    m = small_model(shape=(3, 4), degree=3, g=g, seed=g)
    layer = m.layers[0]
    layer.coeffs[:] = rng.standard_normal(layer.coeffs.shape)
    x = rng.uniform(-1.2, 1.2, (40, 3))  # includes clamped points
    a = layer_forward(layer, x, "recursive")
    b = layer_forward(layer, x, "matrix")
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("degree,g", [(0, 3), (1, 1), (2, 4), (3, 5), (5, 2), (4, 9)])
def test_network_backends_agree(degree, g):
    m = small_model(shape=(2, 5, 3, 1), degree=degree, g=g, seed=degree + g)
    for layer in m.layers:
        layer.coeffs *= 40.0  # make the spline branch matter
    X = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    a = forward(m, X, backend="recursive")
    b = forward(m, X, backend="matrix")
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_forward_rows_independent_of_batch():
    m = small_model(seed=2)
    X = np.random.default_rng(3).uniform(-1, 1, (24, 2))
    full = forward(m, X)
    np.testing.assert_allclose(forward(m, X[:7]), full[:7], atol=1e-12)
    np.testing.assert_allclose(forward(m, X[7:8]), full[7:8], atol=1e-12)


def test_forward_validates_input_shape():
    m = small_model()
    with pytest.raises(ValueError):
        forward(m, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        forward(m, np.zeros(4))


def test_parameter_arrays_are_live_views():
    m = small_model()
    arrays = parameter_arrays(m)
    assert len(arrays) == 3 * len(m.layers)
    arrays[0][0, 0, 0] = 123.0
    assert m.layers[0].coeffs[0, 0, 0] == 123.0


# -------------------------------------------------------------- grid updates


def test_update_grid_expands_domains():
    m = small_model()
    rng = np.random.default_rng(4)
    X = rng.uniform(-2.0, 2.0, (400, 2))
    before = forward(m, X)
    update_grid_from_samples(m, X)
    after = forward(m, X)
    for grid in m.layers[0].grids:
        assert grid.domain_lo <= -2.0 and grid.domain_hi >= 2.0
    # the refit keeps predictions close; clamped tails are not exactly
    # representable on the wider grid, so this is approximate by design
    drift = np.abs(after - before).max()
    assert drift <= 0.1 * np.abs(before).max()


def test_update_grid_is_fixed_point_once_covering():
    m = small_model(seed=5)
    X = np.random.default_rng(6).uniform(-1.5, 1.5, (300, 2))
    update_grid_from_samples(m, X)  # establish covering domains everywhere
    knots = [g.knots.copy() for layer in m.layers for g in layer.grids]
    coeffs = [layer.coeffs.copy() for layer in m.layers]
    update_grid_from_samples(m, X)
    knots2 = [g.knots for layer in m.layers for g in layer.grids]
    coeffs2 = [layer.coeffs for layer in m.layers]
    for a, b in zip(knots, knots2):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(coeffs, coeffs2):
        np.testing.assert_array_equal(a, b)


def test_update_grid_preserves_constant_model():
    m = init_network(NetworkSpec(shape=(1, 1), degree=3, grid_size=5, seed=0,
                                 base_function="none"))
    m.layers[0].coeffs[:] = 0.75
    m.layers[0].spline_weight[:] = 1.0
    X = np.linspace(-2, 2, 101)[:, None]
    update_grid_from_samples(m, X)
    np.testing.assert_allclose(forward(m, X), 0.75, atol=1e-6)


def test_update_grid_warns_on_partial_eps(caplog):
    m = small_model()
    X = np.random.default_rng(7).uniform(-1, 1, (50, 2))
    with caplog.at_level(logging.WARNING):
        update_grid_from_samples(m, X, grid_eps=0.5)
    assert any("grid_eps" in rec.message for rec in caplog.records)


def test_update_grid_rejects_bad_input():
    m = small_model()
    with pytest.raises(ValueError):
        update_grid_from_samples(m, np.empty((0, 2)))
    with pytest.raises(ValueError):
        update_grid_from_samples(m, np.zeros((5, 3)))
    with pytest.raises(ValueError):
        update_grid_from_samples(m, np.zeros((5, 2)), grid_eps=2.0)


# ---------------------------------------------------------------- refinement


def test_refine_same_size_is_noop():
    m = small_model(seed=9)
    X = np.random.default_rng(9).uniform(-1, 1, (100, 2))
    before = [layer.coeffs.copy() for layer in m.layers]
    out = refine_grid(m, 5, X)
    assert out is m
    for layer, old in zip(m.layers, before):
        np.testing.assert_array_equal(layer.coeffs, old)


def test_refine_rejects_coarsening():
    m = small_model()
    with pytest.raises(ValueError):
        refine_grid(m, 3, np.zeros((10, 2)))


def test_refine_preserves_constant():
    m = init_network(NetworkSpec(shape=(1, 1), degree=3, grid_size=5, seed=0,
                                 base_function="none"))
    m.layers[0].coeffs[:] = -1.5
    m.layers[0].spline_weight[:] = 1.0
    X = np.linspace(-1, 1, 101)[:, None]
    refine_grid(m, 20, X)
    assert m.spec.grid_size == 20
    assert m.layers[0].coeffs.shape == (1, 1, 23)
    np.testing.assert_allclose(forward(m, X), -1.5, atol=1e-6)


def test_refine_preserves_network_function():
    # 5 -> 20 intervals with nested knots: the coarse spline is exactly
    # representable on the fine grid, so predictions should barely move
    m = small_model(seed=11)
    for layer in m.layers:
        layer.coeffs *= 30.0
    rng = np.random.default_rng(11)
    X = rng.uniform(-1, 1, (500, 2))
    before = forward(m, X)
    refine_grid(m, 20, X)
    after = forward(m, X)
    scale = np.abs(before).max()
    assert np.abs(after - before).max() <= 1e-4 * max(scale, 1.0)
    for layer in m.layers:
        for grid in layer.grids:
            assert grid.degree == 3 and grid.intervals == 20


# --------------------------------------------------------------- model files


def test_save_load_roundtrip(tmp_path):
    m = small_model(shape=(2, 4, 1), degree=2, g=7, seed=13)
    rng = np.random.default_rng(13)
    for layer in m.layers:
        layer.coeffs[:] = rng.standard_normal(layer.coeffs.shape)
    update_grid_from_samples(m, rng.uniform(-1.8, 1.8, (100, 2)))
    path = tmp_path / "model.mkan"
    save_model(m, path)
    loaded = load_model(path)
    assert isinstance(loaded, Model)
    assert loaded.spec == m.spec
    for la, lb in zip(m.layers, loaded.layers):
        np.testing.assert_array_equal(la.coeffs, lb.coeffs)
        np.testing.assert_array_equal(la.base_weight, lb.base_weight)
        np.testing.assert_array_equal(la.spline_weight, lb.spline_weight)
        for ga, gb in zip(la.grids, lb.grids):
            np.testing.assert_array_equal(ga.knots, gb.knots)
    X = rng.uniform(-1, 1, (50, 2))
    np.testing.assert_array_equal(forward(m, X), forward(loaded, X))


def test_load_rejects_trailing_bytes(tmp_path):
    m = small_model()
    path = tmp_path / "model.mkan"
    save_model(m, path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        load_model(path)


def test_load_rejects_wrong_magic(tmp_path):
    path = tmp_path / "model.mkan"
    path.write_bytes(b"NOPE!\n" + b"{}" * 10)
    with pytest.raises(ValueError):
        load_model(path)


def test_load_rejects_truncated_file(tmp_path):
    m = small_model()
    path = tmp_path / "model.mkan"
    save_model(m, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 16])
    with pytest.raises(ValueError):
        load_model(path)
