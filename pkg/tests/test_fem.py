import numpy as np
import pytest
from hypothesis import given, strategies as st

from separapde.assembly import PointLoad, SourceTerm, load_separated
from separapde.errors import FormatError, IncompatibleDomainError
from separapde.fem import (NodalField, apply_operator, axis_operators, dense_operator, energy,
                           energy_norm, energy_norm_diff, energy_norm_error, galerkin_residual,
                           dumps_field, loads_field, merge_nodes, prolongate, solve_fem)
from separapde.mesh import Grid1D, TensorMesh, uniform_mesh
from separapde.problems import sinsin

from conftest import random_nodes


def q1_assembly(x, y):
    """Bilinear-element stiffness on a tensor mesh, assembled element by element."""
    nx, ny = x.size, y.size
    A = np.zeros((nx * ny, nx * ny))
    g, w = np.polynomial.legendre.leggauss(3)
    for i in range(nx - 1):
        for j in range(ny - 1):
            hx, hy = x[i + 1] - x[i], y[j + 1] - y[j]
            loc = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]
            Ke = np.zeros((4, 4))
            for a, wa in zip((g + 1) / 2, w / 2):
                for b, wb in zip((g + 1) / 2, w / 2):
                    dN = np.array([[-(1 - b) / hx, -(1 - a) / hy], [(1 - b) / hx, -a / hy],
                                   [-b / hx, (1 - a) / hy], [b / hx, a / hy]])
                    Ke += wa * wb * hx * hy * dN @ dN.T
            idx = [p * ny + q for p, q in loc]
            A[np.ix_(idx, idx)] += Ke
    return A


def test_dense_operator_matches_element_assembly(rng):
    x, y = random_nodes(rng, 5), random_nodes(rng, 4)
    A = dense_operator((Grid1D(x), Grid1D(y)))
    assert np.allclose(A, q1_assembly(x, y), atol=1e-12)


def test_fem_matches_dense_solve(rng, point2d):
    x, y = random_nodes(rng, 7), random_nodes(rng, 6)
    mesh = TensorMesh((Grid1D(x), Grid1D(y)))
    for src in (sinsin(2).source, SourceTerm(point_loads=(PointLoad((0.37, 0.61), 2.0),))):
        u = solve_fem(mesh, src)
        A = q1_assembly(x, y).reshape(7, 6, 7, 6)[1:-1, 1:-1, 1:-1, 1:-1].reshape(5 * 4, 5 * 4)
        F = load_separated(mesh.axes, src).dense()[1:-1, 1:-1].ravel()
        assert np.allclose(u.values[1:-1, 1:-1].ravel(), np.linalg.solve(A, F), rtol=1e-10, atol=1e-14)
        assert np.all(u.values[[0, -1], :] == 0) and np.all(u.values[:, [0, -1]] == 0)


def test_fem_3d_matches_dense_solve(rng):
    mesh = TensorMesh(tuple(Grid1D(random_nodes(rng, n)) for n in (5, 4, 6)))
    src = sinsin(3).source
    u = solve_fem(mesh, src)
    A = dense_operator(mesh.axes).reshape(mesh.shape * 2)
    sl = (slice(1, -1),) * 3
    Ai = A[sl + sl].reshape(3 * 2 * 4, 3 * 2 * 4)
    F = load_separated(mesh.axes, src).dense()[sl].ravel()
    assert np.allclose(u.values[sl].ravel(), np.linalg.solve(Ai, F), rtol=1e-10)


def test_galerkin_orthogonality(sinsin2d, rng):
    u = solve_fem(uniform_mesh((9, 11)), sinsin2d.source)
    v = np.pad(rng.standard_normal((7, 9)), 1)
    assert abs(galerkin_residual(u, v, sinsin2d.source)) <= 1e-12 * np.abs(v).max()


def test_discrete_energy_identity(sinsin2d):
    u = solve_fem(uniform_mesh((17, 17)), sinsin2d.source)
    e = energy(u, sinsin2d.source)
    assert e.total == pytest.approx(-e.quadratic, rel=1e-12)
    assert e.linear == pytest.approx(2 * e.quadratic, rel=1e-12)


def test_energy_of_zero_field(sinsin2d):
    mesh = uniform_mesh((5, 5))
    e = energy(NodalField(mesh, np.zeros(mesh.shape)), sinsin2d.source)
    assert e.total == 0.0


def _brute_error(u, exact_grad, order=6):
    """Elementwise tensor Gauss quadrature of |∇(u_h − u)|² divided by |∇u|²."""
    x, y = (g.nodes for g in u.grids)
    g, w = np.polynomial.legendre.leggauss(order)
    num = den = 0.0
    U = u.values
    for i in range(x.size - 1):
        for j in range(y.size - 1):
            hx, hy = x[i + 1] - x[i], y[j + 1] - y[j]
            for a, wa in zip((g + 1) / 2, w / 2):
                for b, wb in zip((g + 1) / 2, w / 2):
                    ux = ((U[i + 1, j] - U[i, j]) * (1 - b) + (U[i + 1, j + 1] - U[i, j + 1]) * b) / hx
                    uy = ((U[i, j + 1] - U[i, j]) * (1 - a) + (U[i + 1, j + 1] - U[i + 1, j]) * a) / hy
                    ex, ey = exact_grad(x[i] + a * hx, y[j] + b * hy)
                    wt = wa * wb * hx * hy
                    num += wt * ((ux - ex) ** 2 + (uy - ey) ** 2)
                    den += wt * (ex**2 + ey**2)
    return np.sqrt(num / den)


def test_analytic_error_matches_brute_force(sinsin2d, rng):
    mesh = TensorMesh((Grid1D(random_nodes(rng, 6)), Grid1D(random_nodes(rng, 8))))
    u = solve_fem(mesh, sinsin2d.source)
    pi = np.pi

    def grad(x, y):
        return pi * np.cos(pi * x) * np.sin(pi * y), pi * np.sin(pi * x) * np.cos(pi * y)

    assert energy_norm_error(u, sinsin2d.exact) == pytest.approx(_brute_error(u, grad), rel=1e-8)


def test_sinsin_error_halves_with_h(sinsin2d):
    errs = [energy_norm_error(solve_fem(uniform_mesh((n, n)), sinsin2d.source), sinsin2d.exact)
            for n in (11, 21, 41)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.01)


def test_cross_mesh_error_uses_common_refinement(point2d):
    coarse = solve_fem(uniform_mesh((5, 5)), point2d.source)
    fine = solve_fem(uniform_mesh((9, 9)), point2d.source)
    # nested meshes: the coarse field is exactly representable on the fine one
    P = prolongate(coarse, fine.grids)
    D = NodalField(fine.mesh, fine.values - P)
    assert energy_norm_diff(coarse, fine) == pytest.approx(energy_norm(D), rel=1e-12)
    # Galerkin orthogonality on nested spaces gives the Pythagorean identity
    lhs = energy_norm(fine) ** 2
    rhs = energy_norm(coarse) ** 2 + energy_norm_diff(coarse, fine) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_cross_mesh_error_non_nested(rng, sinsin2d):
    a = solve_fem(TensorMesh((Grid1D(random_nodes(rng, 6)),) * 2), sinsin2d.source)
    b = solve_fem(uniform_mesh((7, 7)), sinsin2d.source)
    assert energy_norm_diff(a, b) == pytest.approx(energy_norm_diff(b, a), rel=1e-12)
    assert energy_norm_diff(a, a) == 0.0


def test_mismatched_meshes_rejected(sinsin2d):
    u2 = solve_fem(uniform_mesh((5, 5)), sinsin2d.source)
    u3 = solve_fem(uniform_mesh((4, 4, 4)), sinsin(3).source)
    with pytest.raises(IncompatibleDomainError):
        energy_norm_diff(u2, u3)
    with pytest.raises(IncompatibleDomainError):
        merge_nodes(np.array([0.0, 1.0]), np.array([0.0, 2.0]))
    with pytest.raises(IncompatibleDomainError):
        NodalField(uniform_mesh((5, 5)), np.zeros((4, 5)))


@given(st.integers(0, 10**6))
def test_operator_symmetric_positive(seed):
    rng = np.random.default_rng(seed)
    grids = (Grid1D(random_nodes(rng, 5)), Grid1D(random_nodes(rng, 6)))
    ops = axis_operators(grids)
    U, V = (np.pad(rng.standard_normal((3, 4)), 1) for _ in range(2))
    assert np.sum(U * apply_operator(V, ops)) == pytest.approx(np.sum(V * apply_operator(U, ops)))
    assert np.sum(U * apply_operator(U, ops)) > 0


def test_field_round_trip(tmp_path, point2d, rng):
    mesh = TensorMesh((Grid1D(random_nodes(rng, 5)), Grid1D(random_nodes(rng, 4))))
    u = solve_fem(mesh, point2d.source)
    back = loads_field(dumps_field(u))
    assert back.mesh == u.mesh and np.array_equal(back.values, u.values)


@pytest.mark.parametrize("text", ["", "nodal-field v2 dims=1 n=2\n",
                                  "nodal-field v1 dims=2 n=2,2\nnodes= 0 1\nnodes= 0 1\n0 0 0\n"])
def test_field_format_errors(text):
    with pytest.raises(FormatError):
        loads_field(text)
