import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtgame.grid import (
    ExtrapolationError,
    GeneratingField,
    GridError,
    GridTooCoarseError,
    MultitimeGrid,
    ValueField,
    antidiagonal_levels,
    box_integral,
    divergence_residual,
    interp_state,
    read_field_csv,
    spatial_gradient,
    write_field_csv,
)


def grid1(nx=21, lo=-1.0, hi=1.0, nt=3):
    return MultitimeGrid((nt,), (1.0,), (lo,), (hi,), (nx,))


def field_of(grid, f):
    xs = grid.state_axis(0)
    vals = np.broadcast_to(f(xs), grid.shape).copy()
    return ValueField(grid, vals)


def test_node_coordinates():
    g = MultitimeGrid((11, 5), (1.0, 2.0), (-1.0,), (3.0,), (9,))
    assert g.time_axis(1)[-1] == pytest.approx(2.0, abs=1e-12)
    assert g.state_axis(0)[-1] == pytest.approx(3.0, abs=1e-12)
    assert g.size == 11 * 5 * 9
    assert np.all(g.state_axis(0) == -1.0 + np.arange(9) * 0.5)


def test_too_coarse():
    with pytest.raises(GridTooCoarseError):
        MultitimeGrid((1,), (1.0,), (0.0,), (1.0,), (5,))


def test_gradient_of_square_exact():
    g = grid1(nx=11, lo=0.0, hi=1.0)
    f = field_of(g, lambda x: x**2)
    assert spatial_gradient(f, (0, 5))[0] == pytest.approx(1.0, abs=1e-12)


def test_gradient_constant_zero():
    g = grid1()
    assert np.all(spatial_gradient(field_of(g, lambda x: 0 * x + 3.0), (1, 10)) == 0.0)


def test_gradient_of_sin():
    g = grid1(nx=201)
    f = field_of(g, np.sin)
    assert abs(spatial_gradient(f, (0, 100))[0] - 1.0) <= 1e-4


def test_central_needs_interior_upwind_does_not():
    g = grid1()
    f = field_of(g, lambda x: x)
    with pytest.raises(GridError):
        spatial_gradient(f, (0, 0))
    assert spatial_gradient(f, (0, 0), scheme="upwind", sign=-1)[0] == pytest.approx(1.0)
    assert spatial_gradient(f, (0, 20), scheme="upwind", sign=1)[0] == pytest.approx(1.0)


def test_generating_field_gradient_matrix():
    g = MultitimeGrid((3, 3), (1.0, 1.0), (0.0,), (1.0,), (11,))
    comps = np.zeros((2,) + g.shape)
    comps[0] += g.state_axis(0)
    comps[1] += 2 * g.state_axis(0)
    grad = spatial_gradient(GeneratingField(g, comps), (1, 1, 5))
    assert grad.shape == (2, 1)
    assert grad[:, 0] == pytest.approx([1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_gradient_linearity(a, b, seed):
    g = MultitimeGrid((3,), (1.0,), (0.0, 0.0), (1.0, 1.0), (6, 7))
    rng = np.random.default_rng(seed)
    f = rng.normal(size=g.shape)
    h = rng.normal(size=g.shape)
    node = (1, 2, 3)
    lhs = spatial_gradient(ValueField(g, a * f + b * h), node)
    rhs = a * spatial_gradient(ValueField(g, f), node) + b * spatial_gradient(ValueField(g, h), node)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + np.abs(rhs).max()))


def test_box_integral_volume():
    g = MultitimeGrid((11, 11), (1.0, 1.0), (0.0,), (1.0,), (2,))
    ones = np.ones(g.time_nodes)
    assert box_integral(ones, g, (0, 0), (1, 2)) == pytest.approx(0.02, abs=1e-15)
    assert box_integral(ones, g, (3, 4), (3, 9)) == 0.0


def test_box_integral_linear_exact():
    g = MultitimeGrid((11, 11), (1.0, 1.0), (0.0,), (1.0,), (2,))
    s1, s2 = np.meshgrid(g.time_axis(0), g.time_axis(1), indexing="ij")
    assert abs(box_integral(s1 + s2, g, (0, 0), (10, 10)) - 1.0) <= 1e-12


def test_box_integral_bad_corners():
    g = MultitimeGrid((5,), (1.0,), (0.0,), (1.0,), (2,))
    with pytest.raises(IndexError):
        box_integral(np.ones(5), g, (0,), (5,))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 7))
def test_box_additivity(seed, split):
    g = MultitimeGrid((9, 6), (1.0, 0.5), (0.0,), (1.0,), (2,))
    f = np.random.default_rng(seed).normal(size=g.time_nodes)
    whole = box_integral(f, g, (0, 1), (8, 5))
    parts = box_integral(f, g, (0, 1), (split, 5)) + box_integral(f, g, (split, 1), (8, 5))
    assert abs(whole - parts) <= 1e-12


def test_levels_examples():
    levels = antidiagonal_levels(grid1(nt=3))
    assert levels == [[(2,)], [(1,)], [(0,)]]
    g = MultitimeGrid((2, 2), (1.0, 1.0), (0.0,), (1.0,), (2,))
    assert antidiagonal_levels(g) == [[(1, 1)], [(0, 1), (1, 0)], [(0, 0)]]
    g = MultitimeGrid((3, 2), (1.0, 1.0), (0.0,), (1.0,), (2,))
    assert len(antidiagonal_levels(g)) == 4


@pytest.mark.parametrize("nodes", [(4,), (3, 4), (2, 3, 2)])
def test_levels_topological(nodes):
    g = MultitimeGrid(nodes, (1.0,) * len(nodes), (0.0,), (1.0,), (2,))
    order = {}
    for k, level in enumerate(antidiagonal_levels(g)):
        assert level == sorted(level)
        for j in level:
            order[j] = k
    assert len(order) == int(np.prod(nodes))
    for j, k in order.items():
        for subset in itertools.product((0, 1), repeat=len(nodes)):
            if not any(subset):
                continue
            nb = tuple(a + s for a, s in zip(j, subset))
            if nb in order:
                assert order[nb] < k


def test_interp_exact_on_bilinear():
    g = MultitimeGrid((2,), (1.0,), (0.0, 0.0), (1.0, 2.0), (5, 9))
    X, Y = np.meshgrid(g.state_axis(0), g.state_axis(1), indexing="ij")
    vals = 1 + 2 * X - Y + 3 * X * Y
    q = np.array([[0.3, 1.7], [0.05, 0.01]])
    out, clamped = interp_state(vals, g, q)
    assert np.allclose(out, 1 + 2 * q[:, 0] - q[:, 1] + 3 * q[:, 0] * q[:, 1], atol=1e-14)
    assert not clamped.any()
    _, clamped = interp_state(vals, g, np.array([[2.0, 0.5]]))
    assert clamped.all()


def test_divergence_zero_field():
    g = MultitimeGrid((5, 5), (1.0, 1.0), (-1.0,), (1.0,), (11,))
    f = GeneratingField(g, np.zeros((2,) + g.shape))
    states = np.full((5, 1), 0.3)
    assert divergence_residual(f, (0, 0), (4, 4), states) == 0.0


def test_divergence_linear_in_time():
    g = MultitimeGrid((6, 4), (1.0, 0.6), (-1.0,), (1.0,), (11,))
    comps = np.zeros((2,) + g.shape)
    comps[0] += g.time_axis(0)[:, None, None]
    comps[1] += g.time_axis(1)[None, :, None]
    f = GeneratingField(g, comps)
    path = [(0, 0), (1, 1), (2, 2), (3, 3), (4, 3), (5, 3)]
    states = np.linspace(-0.5, 0.5, len(path))[:, None]
    assert divergence_residual(f, (0, 0), (5, 3), states, path) <= 1e-12


def test_divergence_leaves_grid():
    g = MultitimeGrid((3,), (1.0,), (-1.0,), (1.0,), (11,))
    f = GeneratingField(g, np.zeros((1,) + g.shape))
    with pytest.raises(ExtrapolationError):
        divergence_residual(f, (0,), (2,), np.array([[0.0], [0.5], [1.5]]))


def test_csv_round_trip(tmp_path):
    g = MultitimeGrid((3, 2), (1.0, 1.0), (-1.0,), (1.0,), (4,))
    vals = np.random.default_rng(0).normal(size=g.shape) / 3
    write_field_csv(ValueField(g, vals), tmp_path / "f.csv")
    back = read_field_csv(tmp_path / "f.csv", g)
    assert np.array_equal(back.values, vals)
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "t1,t2,x1,value"
    comps = np.stack([vals, -vals])
    write_field_csv(GeneratingField(g, comps), tmp_path / "g.csv")
    assert np.array_equal(read_field_csv(tmp_path / "g.csv", g).components, comps)
