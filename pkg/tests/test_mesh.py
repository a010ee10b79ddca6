import numpy as np
import pytest
from hypothesis import given, strategies as st

from separapde.errors import InvalidRangeError
from separapde.mesh import (Grid1D, ShapeSupport, TensorMesh, build_uniform_grid, hat_deriv_x,
                            hat_eval, hat_eval_relu, hat_grad_nodes, interp_matrix, locate,
                            project_positions, relu_shape_values, shape_values, uniform_mesh)

from conftest import random_nodes

S = ShapeSupport(1, 0.0, 0.5, 1.0)


def grids():
    return st.integers(2, 30).flatmap(
        lambda n: st.integers(0, 2**31 - 1).map(lambda seed: random_nodes(np.random.default_rng(seed), n)))


def test_uniform_grid_examples():
    assert np.array_equal(build_uniform_grid(0, 1, 2).nodes, [0.0, 1.0])
    assert np.array_equal(build_uniform_grid(0, 1, 5).nodes, [0, 0.25, 0.5, 0.75, 1])
    g = build_uniform_grid(0, 1, 41)
    assert g.n == 41 and np.allclose(g.h, 0.025)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0


@pytest.mark.parametrize("a,b,n", [(1, 1, 5), (2, 1, 5), (0, 1, 1)])
def test_uniform_grid_rejects_bad_range(a, b, n):
    with pytest.raises(InvalidRangeError):
        build_uniform_grid(a, b, n)


def test_grid_invariants():
    with pytest.raises(InvalidRangeError):
        Grid1D([0.0, 0.5, 0.5, 1.0])
    g = Grid1D([0.0, 0.3, 1.0], movable=[True, True, True])
    assert not g.movable[0] and not g.movable[-1] and g.movable[1]
    with pytest.raises(InvalidRangeError):
        g.with_nodes([0.1, 0.3, 1.0])
    with pytest.raises(ValueError):
        g.nodes[1] = 0.2


def test_tensor_mesh_dims():
    m = uniform_mesh((5, 7))
    assert m.dim == 2 and m.shape == (5, 7) and m.label() == "5x7"
    with pytest.raises(InvalidRangeError):
        TensorMesh((build_uniform_grid(0, 1, 3),))


def test_support_rejects_unordered():
    with pytest.raises(InvalidRangeError):
        ShapeSupport(1, 0.5, 0.5, 1.0)


@pytest.mark.parametrize("x,expected", [(0.5, 1.0), (0.25, 0.5), (1.2, 0.0)])
def test_hat_eval_examples(x, expected):
    assert hat_eval(S, x) == expected


@pytest.mark.parametrize("x,expected", [(0.5, 1.0), (0.75, 0.5)])
def test_hat_eval_relu_examples(x, expected):
    assert hat_eval_relu(S, x) == expected


def test_relu_matches_closed_form_on_random_points(rng):
    g = Grid1D(random_nodes(rng, 9))
    xs = rng.uniform(-0.5, 1.5, 1000)
    for i in range(g.n):
        sup = g.support(i)
        diff = max(abs(hat_eval_relu(sup, x) - hat_eval(sup, x)) for x in xs)
        assert diff <= 1e-14


@pytest.mark.parametrize("x,expected", [(0.25, 2.0), (0.75, -2.0), (1.5, 0.0)])
def test_hat_deriv_examples(x, expected):
    assert hat_deriv_x(S, x) == expected


def test_derivative_breakpoint_conventions():
    assert hat_deriv_x(S, 0.5) == -2.0  # right limit at the centre
    g = build_uniform_grid(0, 1, 3)
    last = g.support(2)
    assert last.closes_domain
    assert hat_deriv_x(last, 1.0) == 2.0  # left limit at the final node


def test_hat_grad_nodes_examples():
    dl, dc, dr = hat_grad_nodes(S, 0.25)
    assert dc == pytest.approx(-1.0)
    assert dr == 0.0


def test_hat_grad_nodes_finite_differences(rng):
    for _ in range(100):
        xl, xc, xr = np.sort(rng.uniform(0, 1, 3))
        if min(xc - xl, xr - xc) < 0.05:
            continue
        x = rng.uniform(xl, xr)
        if min(abs(x - xl), abs(x - xc), abs(x - xr)) < 1e-3:
            continue
        analytic = hat_grad_nodes(ShapeSupport(1, xl, xc, xr), x)
        pts = np.array([xl, xc, xr])
        for k in range(3):
            p, m = pts.copy(), pts.copy()
            p[k] += 1e-6
            m[k] -= 1e-6
            fd = (hat_eval(ShapeSupport(1, *p), x) - hat_eval(ShapeSupport(1, *m), x)) / 2e-6
            assert abs(fd - analytic[k]) <= 1e-6 * max(1.0, abs(fd))


@given(grids(), st.integers(0, 2**31 - 1))
def test_partition_of_unity_and_delta(nodes, seed):
    xs = np.random.default_rng(seed).uniform(nodes[0], nodes[-1], 200)
    assert np.allclose(shape_values(nodes, xs).sum(axis=1), 1.0, atol=1e-12, rtol=0)
    assert np.array_equal(shape_values(nodes, nodes), np.eye(nodes.size))
    assert np.abs(relu_shape_values(nodes, xs) - shape_values(nodes, xs)).max() <= 1e-14


@given(grids())
def test_pointwise_hats_agree_with_matrix(nodes):
    g = Grid1D(nodes)
    xs = np.linspace(nodes[0], nodes[-1], 37)
    M = shape_values(nodes, xs)
    for i in range(g.n):
        sup = g.support(i)
        assert np.allclose([hat_eval(sup, x) for x in xs], M[:, i], atol=1e-14)


def test_interp_matrix_outside_and_derivative():
    nodes = np.array([0.0, 0.4, 1.0])
    assert interp_matrix(nodes, [-0.1, 1.1]).nnz == 0 or np.all(interp_matrix(nodes, [-0.1, 1.1]).toarray() == 0)
    D = interp_matrix(nodes, [0.2, 0.7], deriv=True).toarray()
    assert np.allclose(D, [[-2.5, 2.5, 0], [0, -1 / 0.6, 1 / 0.6]])


def test_locate_breakpoints():
    nodes = np.array([0.0, 0.5, 1.0])
    e, t = locate(nodes, [0.0, 0.5, 1.0])
    assert list(e) == [0, 1, 1] and list(t) == [0.0, 0.0, 1.0]


@given(st.lists(st.floats(-0.5, 1.5), min_size=3, max_size=20))
def test_projection_restores_feasibility(values):
    x = np.array([0.0] + sorted(values)[: len(values)] + [1.0])
    x[1:-1] = np.asarray(values)  # unsorted on purpose
    movable = np.ones(x.size, dtype=bool)
    movable[[0, -1]] = False
    gap = 1e-6
    y = project_positions(x, movable, gap)
    assert y[0] == 0.0 and y[-1] == 1.0
    assert np.all(np.diff(y) >= gap * (1 - 1e-9))


def test_projection_keeps_feasible_input(rng):
    x = random_nodes(rng, 10)
    movable = np.ones(10, dtype=bool)
    assert np.array_equal(project_positions(x, movable, 1e-6), x)
