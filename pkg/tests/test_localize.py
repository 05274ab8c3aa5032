import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldscope.core import grid_points, make_grid, nearest_index
from fieldscope.fields import ATTRACTOR_GAUSS, ATTRACTOR_SQRT, REPELLER_EXP, CentralFieldSpec, default_specs
from fieldscope.learn import evaluate_on_grid
from fieldscope.localize import (
    ATTRACTIVE,
    REPULSIVE,
    GridField,
    ObjectEstimate,
    coverage_mask,
    divergence,
    estimate_size,
    locate,
)

GRID = make_grid(-20, 20, -20, 20, 0.3)


def sampled(fn, g=GRID):
    return GridField(g, fn(grid_points(g)))


@pytest.mark.parametrize(
    "fn, expected",
    [
        (lambda p: -p, -2.0),
        (lambda p: p, 2.0),
        (lambda p: np.column_stack([-p[:, 1], p[:, 0]]), 0.0),
    ],
)
def test_divergence_of_linear_fields(fn, expected):
    div = divergence(sampled(fn)).values
    assert div.shape == (134, 134)
    assert np.abs(div[1:-1, 1:-1] - expected).max() < 1e-9
    # second-order one-sided stencils are exact for linear fields too
    assert np.abs(div - expected).max() < 1e-9


def test_divergence_needs_three_by_three():
    g = make_grid(0, 1, 0, 1, 0.5)
    divergence(GridField(g, np.zeros((9, 2))))
    with pytest.raises(ValueError):
        divergence(GridField(make_grid(0, 1, 0, 1, 1), np.zeros((4, 2))))


def test_divergence_of_quadratic_matches_analytic_inside():
    # v = (x^2, x*y): div = 2x + x = 3x, exact for central differences
    f = sampled(lambda p: np.column_stack([p[:, 0] ** 2, p[:, 0] * p[:, 1]]))
    X, _ = np.meshgrid(GRID.xs, GRID.ys)
    assert np.allclose(divergence(f).values[1:-1, 1:-1], 3 * X[1:-1, 1:-1], atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_divergence_is_linear(seed):
    g = make_grid(0, 3, 0, 3, 0.5)
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(g.size, 2)), rng.normal(size=(g.size, 2))
    lhs = divergence(GridField(g, a + b)).values
    rhs = divergence(GridField(g, a)).values + divergence(GridField(g, b)).values
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_grid_field_length_checked():
    with pytest.raises(ValueError):
        GridField(GRID, np.zeros((10, 2)))


def test_coverage_mask_examples():
    everything = coverage_mask(GRID, np.array([[0.0, 0.0]]), 60.0)
    assert everything.all()
    assert not coverage_mask(GRID, np.zeros((0, 2)), 1.0).any()
    g = make_grid(-2, 2, -2, 2, 0.25)
    mask = coverage_mask(g, np.array([[0.0, 0.0]]), 1.0)
    brute = np.array([[math.hypot(x, y) <= 1.0 for x in g.xs] for y in g.ys])
    assert np.array_equal(mask, brute)
    with pytest.raises(ValueError):
        coverage_mask(g, np.zeros((1, 2)), 0.0)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=8), st.floats(0.1, 2.0))
def test_coverage_mask_matches_brute_force(points, radius):
    g = make_grid(-2, 2, -2, 2, 0.5)
    pts = np.array(points)
    cells = grid_points(g)
    dist = np.min(np.linalg.norm(cells[:, None, :] - pts[None, :, :], axis=2), axis=1)
    assert np.array_equal(coverage_mask(g, pts, radius).ravel(), dist <= radius)


def test_locate_sqrt_attractor_on_reference_grid():
    a1 = default_specs()[0]
    est = locate(divergence(evaluate_on_grid(a1, GRID)))
    # brute-force oracle: the grid point nearest the true center
    i, j = nearest_index(GRID, a1.center)
    assert math.dist(est.position, a1.center) <= GRID.step
    assert math.dist(est.position, (GRID.xs[i], GRID.ys[j])) <= GRID.step
    assert est.nature == ATTRACTIVE and est.div_value < 0 and est.is_attractive


def test_locate_breaks_ties_by_first_cell():
    g = make_grid(0, 2, 0, 2, 0.5)
    est = locate(divergence(sampled(lambda p: p, g)))
    assert est.position == (0.0, 0.0) and est.nature == REPULSIVE
    assert est.div_value == pytest.approx(2.0)


def test_locate_respects_mask():
    g = make_grid(0, 2, 0, 2, 0.5)
    div = divergence(sampled(lambda p: p, g))
    mask = np.zeros(g.shape, bool)
    mask[2, 3] = True
    assert locate(div, mask).position == (1.5, 1.0)
    with pytest.raises(ValueError):
        locate(div, np.zeros(g.shape, bool))


def test_zero_divergence_counts_as_repulsive():
    g = make_grid(0, 2, 0, 2, 0.5)
    assert locate(divergence(GridField(g, np.zeros((g.size, 2))))).nature == REPULSIVE


@settings(max_examples=30, deadline=None)
@given(
    st.sampled_from([ATTRACTOR_SQRT, ATTRACTOR_GAUSS, REPELLER_EXP]),
    st.floats(-17, 17),
    st.floats(-17, 17),
)
def test_analytic_fields_are_located_within_two_steps(kind, cx, cy):
    spec = CentralFieldSpec(kind, (cx, cy))
    div = divergence(evaluate_on_grid(spec, GRID))
    est = locate(div)
    assert math.dist(est.position, spec.center) <= 2 * GRID.step
    assert est.nature == (ATTRACTIVE if spec.is_attractor else REPULSIVE)
    i, j = nearest_index(GRID, spec.center)
    center_value = div.values[j, i]
    assert center_value < 0 if spec.is_attractor else center_value > 0


def test_size_diagnostic():
    rep = CentralFieldSpec(REPELLER_EXP, (0.0, 0.0))
    div = divergence(evaluate_on_grid(rep, GRID))
    est = locate(div)
    size = estimate_size(div, est)
    assert size is not None and 0 < size < 20
    bigger = estimate_size(div, est, fraction=0.05)
    assert bigger >= size
    flat = GridField(GRID, np.zeros((GRID.size, 2)))
    assert estimate_size(divergence(flat), ObjectEstimate((0.0, 0.0), REPULSIVE, 0.0)) is None
