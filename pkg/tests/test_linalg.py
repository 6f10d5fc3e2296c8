import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from thinspec.coefficients import CoefficientMatrix
from thinspec.errors import IncompatibleRHS, NotElliptic
from thinspec.geometry import build_cell_mesh
from thinspec.linalg import (assemble_mass, assemble_stiffness, laplacian_1d,
                             smallest_eigenpairs, solve_cg)


def test_1d_laplacian_stencil_and_ritz_value():
    K, M = laplacian_1d(100)
    h = 1 / 101
    d = K.matrix.toarray() * h
    assert d[5, 5] == pytest.approx(2.0) and d[5, 4] == pytest.approx(-1.0)
    lam = smallest_eigenpairs(K, M, k=1)[0].value
    exact_discrete = 4 / h ** 2 * np.sin(np.pi * h / 2) ** 2
    assert lam == pytest.approx(exact_discrete, rel=1e-10)
    assert abs(lam - np.pi ** 2) / np.pi ** 2 <= 1e-3


def test_flat_cell_identity_gives_periodic_five_point_stencil(flat, identity):
    m = build_cell_mesh(flat, 0.0, 16, 16)
    K = assemble_stiffness(m, identity).matrix
    g = m.grid
    r, q = g.h1 / g.h2, g.h2 / g.h1
    i, j = 0, 8                      # column 0: the west neighbour wraps to column 15
    p = g.dof[i, j]
    row = K.getrow(p).toarray().ravel()
    assert row[p] == pytest.approx(2 * q + 2 * r, rel=1e-12)
    assert row[g.dof[15, j]] == pytest.approx(-q, rel=1e-12)
    assert row[g.dof[1, j]] == pytest.approx(-q, rel=1e-12)
    assert row[g.dof[i, j + 1]] == pytest.approx(-r, rel=1e-12)
    assert np.count_nonzero(np.abs(row) > 1e-14) == 5


def test_operator_is_symmetric_without_stored_zeros(hstrip):
    A = CoefficientMatrix.parse("1 + 0.5*sin(2*pi*y1)", "0.2*cos(2*pi*y1)", "1 + 0.3*y2")
    m = build_cell_mesh(hstrip, 0.25, 24, 24)
    K = assemble_stiffness(m, A).matrix
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()
    assert np.all(K.data != 0)


def test_weighted_free_operator_kernel(flat, identity):
    m = build_cell_mesh(flat, 0.0, 24, 24)
    _, y2 = m.grid.coords
    w = 2 * np.sin(np.pi * y2) ** 2
    K = assemble_stiffness(m, identity, weight=w, mode="free")
    act = K.active
    Ka = K.matrix[act][:, act]
    assert np.max(np.abs(Ka @ np.ones(act.sum()))) <= 1e-12 * abs(Ka).max()
    ev = np.linalg.eigvalsh(Ka.toarray())
    assert ev.min() >= -1e-10 * ev.max()


def test_not_elliptic_reports_point(flat):
    A = CoefficientMatrix.parse("1", "2", "1")
    m = build_cell_mesh(flat, 0.0, 16, 16)
    with pytest.raises(NotElliptic) as info:
        assemble_stiffness(m, A)
    assert info.value.point is not None


def test_mass_examples(flat):
    m = build_cell_mesh(flat, 0.0, 20, 20)
    M = assemble_mass(m).diagonal()
    g = m.grid
    interior = ~(g.nbr < 0).any(axis=1)
    np.testing.assert_allclose(M[interior], g.h1 * g.h2, rtol=1e-12)
    Z = assemble_mass(m, weight=np.zeros(g.n))
    assert Z.degenerate and not np.any(Z.diagonal())
    _, y2 = g.coords
    W = assemble_mass(m, weight=2 * np.sin(np.pi * y2) ** 2)
    assert W.diagonal().sum() == pytest.approx(1.0, rel=1e-3)


def test_diagonal_eigenproblem():
    K = sp.diags([1.0, 2.0, 3.0])
    M = sp.identity(3)
    pairs = smallest_eigenpairs(K, M, k=2)
    assert [p.value for p in pairs] == pytest.approx([1.0, 2.0])
    assert abs(pairs[0].vector[0]) == pytest.approx(1.0)
    assert abs(pairs[1].vector[1]) == pytest.approx(1.0)


def test_sparse_path_1d_laplacian_three_modes():
    K, M = laplacian_1d(1000)
    vals = [p.value for p in smallest_eigenpairs(K, M, k=3)]
    np.testing.assert_allclose(vals, np.pi ** 2 * np.array([1, 4, 9]), rtol=1e-3)


def test_m_orthonormal_and_deflation(hstrip, identity):
    m = build_cell_mesh(hstrip, 0.1, 32, 32)
    K = assemble_stiffness(m, identity)
    M = assemble_mass(m)
    p3 = smallest_eigenpairs(K, M, k=3)
    p4 = smallest_eigenpairs(K, M, k=4)
    U = np.stack([p.vector for p in p3], axis=1)
    G = U.T @ (M.diagonal()[:, None] * U)
    assert np.max(np.abs(G - np.eye(3))) <= 1e-8
    np.testing.assert_allclose([p.value for p in p4[:3]], [p.value for p in p3], rtol=1e-8)
    assert all(p.residual_norm <= 1e-8 for p in p4)


def test_start_vector_scaling_leaves_eigenvalues(hstrip, identity):
    m = build_cell_mesh(hstrip, 0.1, 32, 32)
    K = assemble_stiffness(m, identity)
    M = assemble_mass(m)
    v = np.linspace(1.0, 2.0, m.grid.n)
    a = smallest_eigenpairs(K, M, k=2, v0=v)
    b = smallest_eigenpairs(K, M, k=2, v0=1e6 * v)
    np.testing.assert_allclose([p.value for p in a], [p.value for p in b], rtol=1e-10)


def _neumann_1d(n):
    main = np.full(n, 2.0)
    main[[0, -1]] = 1.0
    return sp.diags([-np.ones(n - 1), main, -np.ones(n - 1)], [-1, 0, 1], format="csr")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=8, max_size=40))
def test_cg_neumann_matches_pseudoinverse(vals):
    b = np.array(vals)
    b -= b.mean()
    if np.linalg.norm(b) < 1e-3:
        return
    K = _neumann_1d(len(b))
    x = solve_cg(K, b, tol=1e-12, constraint=np.ones(len(b)))
    ref = np.linalg.pinv(K.toarray()) @ b          # minimum norm = zero mean
    np.testing.assert_allclose(x, ref, atol=1e-8 * (1 + np.abs(ref).max()))
    assert abs(x.sum()) <= 1e-10 * len(b)


def test_cg_rejects_incompatible_rhs():
    K = _neumann_1d(10)
    with pytest.raises(IncompatibleRHS):
        solve_cg(K, np.ones(10), constraint=np.ones(10))


def test_cg_spd_system():
    K, _ = laplacian_1d(50)
    b = np.sin(np.arange(50.0))
    x = solve_cg(K, b, tol=1e-12)
    np.testing.assert_allclose(K.matrix @ x, b, atol=1e-9)
