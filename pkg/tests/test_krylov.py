import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import aslinearoperator

from sparsehom.errors import InvalidOperatorError, InvalidRequestError, NumericalBreakdownError
from sparsehom.hierarchy import DIRICHLET_HAT, PERIODIC_HAT, PIECEWISE_CONSTANT, gauss_rule, gram_matrix_1d, synthesis_matrix
from sparsehom.krylov import (
    KroneckerSum,
    cg_solve,
    diagonal_preconditioner,
    kronecker_apply,
    operator_diagonal,
    symmetry_defect,
    to_dense,
)
from sparsehom.tensor_index import build_space_map


def random_spd(n, seed, cond=100.0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.geomspace(1.0, cond, n)) @ Q.T


# -- conjugate gradients ---------------------------------------------------------

def test_identity_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    res = cg_solve(np.eye(3), b)
    np.testing.assert_allclose(res.solution, b)
    assert res.iterations == 1
    assert res.converged


def test_two_by_two():
    res = cg_solve(np.array([[2.0, 1.0], [1.0, 2.0]]), np.ones(2))
    np.testing.assert_allclose(res.solution, [1 / 3, 1 / 3], atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 20), seed=st.integers(0, 10_000))
def test_n_steps_reach_direct_solution(n, seed):
    # finite termination holds in exact arithmetic; in floating point the
    # n-th iterate agrees with the direct solve up to roundoff
    A = random_spd(n, seed, cond=10.0)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    res = cg_solve(A, b, tol=1e-14, maxit=n)
    assert res.iterations <= n
    assert res.residual <= 1e-10
    np.testing.assert_allclose(res.solution, np.linalg.solve(A, b), rtol=1e-9, atol=1e-10)


def test_energy_error_monotone():
    A = random_spd(20, 7, cond=1e3)
    b = np.random.default_rng(8).standard_normal(20)
    x_star = np.linalg.solve(A, b)
    errs = []
    cg_solve(A, b, tol=1e-13, callback=lambda x: errs.append(np.sqrt((x - x_star) @ A @ (x - x_star))))
    assert all(e1 <= e0 * (1 + 1e-10) for e0, e1 in zip(errs, errs[1:]))


def test_maxit_reported_not_raised():
    A = random_spd(30, 2, cond=1e4)
    res = cg_solve(A, np.ones(30), tol=1e-14, maxit=3)
    assert res.iterations == 3
    assert not res.converged
    assert res.residual > 1e-14


def test_zero_rhs():
    res = cg_solve(np.eye(4), np.zeros(4))
    assert res.iterations == 0 and res.converged
    np.testing.assert_array_equal(res.solution, 0.0)


def test_breakdown_on_indefinite():
    with pytest.raises(NumericalBreakdownError):
        cg_solve(np.diag([1.0, -1.0]), np.array([1.0, 1.0]))


def test_breakdown_on_nonfinite():
    with pytest.raises(NumericalBreakdownError):
        cg_solve(np.eye(2), np.array([np.nan, 1.0]))


def test_bad_arguments():
    with pytest.raises(InvalidRequestError):
        cg_solve(np.eye(2), np.ones(2), tol=0.0)
    with pytest.raises(InvalidRequestError):
        cg_solve(np.eye(3), np.ones(2))


def test_x0_used():
    A = random_spd(5, 3)
    b = np.ones(5)
    x = np.linalg.solve(A, b)
    res = cg_solve(A, b, x0=x)
    assert res.iterations == 0


# -- preconditioning -----------------------------------------------------------------

def test_diagonal_preconditioner_example():
    M = diagonal_preconditioner(np.diag([4.0, 9.0]))
    np.testing.assert_allclose(M.matvec(np.array([4.0, 9.0])), [1.0, 1.0])


def test_preconditioner_of_identity():
    x = np.arange(5.0)
    np.testing.assert_array_equal(diagonal_preconditioner(np.eye(5)).matvec(x), x)


def test_preconditioner_rejects_nonpositive():
    with pytest.raises(InvalidOperatorError):
        diagonal_preconditioner(np.diag([1.0, 0.0]))


def test_operator_diagonal_by_probing():
    A = random_spd(6, 4)
    np.testing.assert_allclose(operator_diagonal(aslinearoperator(A)), np.diag(A))


def test_preconditioning_helps_badly_scaled():
    d = np.geomspace(1, 1e3, 40)
    A = (sp.diags(d) @ (sp.eye(40) + sp.diags([0.2, 0.2], [-1, 1], shape=(40, 40))) @ sp.diags(d)).toarray()
    b = np.ones(40)
    plain = cg_solve(A, b, tol=1e-8, maxit=4000)
    pre = cg_solve(A, b, precond=diagonal_preconditioner(A), tol=1e-8)
    assert pre.iterations < plain.iterations


# -- Kronecker sums ------------------------------------------------------------------

def closed_form_details(kind, L, x):
    """Detail basis values written down directly, columns in flattened order."""
    cols = []
    if kind is PIECEWISE_CONSTANT:
        cols.append(np.ones_like(x))
        for l in range(1, L + 1):
            w = 2.0 ** -(l - 1)
            for j in range(2 ** (l - 1)):
                left = (x >= j * w) & (x < j * w + w / 2)
                right = (x >= j * w + w / 2) & (x < (j + 1) * w)
                cols.append(left.astype(float) - right.astype(float))
    else:
        for l in range(1, L + 1):
            h = 2.0**-l
            for j in range(2 ** (l - 1)):
                c = (2 * j + 1) * h
                cols.append(np.maximum(0.0, 1 - np.abs(x - c) / h))
    return np.column_stack(cols)


def closed_form_detail_slopes(L, x):
    cols = []
    for l in range(1, L + 1):
        h = 2.0**-l
        for j in range(2 ** (l - 1)):
            c = (2 * j + 1) * h
            inside = np.abs(x - c) < h
            cols.append(np.where(inside, -np.sign(x - c) / h, 0.0))
    return np.column_stack(cols)


@pytest.mark.parametrize("kind", [DIRICHLET_HAT, PERIODIC_HAT, PIECEWISE_CONSTANT])
def test_synthesis_matches_closed_form(kind):
    L = 4
    x, _ = gauss_rule(L + 1)
    from sparsehom.hierarchy import detail_basis_matrix
    np.testing.assert_allclose(detail_basis_matrix(kind, L, x).toarray(), closed_form_details(kind, L, x), atol=1e-14)


def test_single_identity_term():
    dm = build_space_map((PIECEWISE_CONSTANT, PERIODIC_HAT), 3, "sparse")
    ks = KroneckerSum([(sp.eye(8), sp.eye(7))], dm)
    x = np.random.default_rng(0).standard_normal(dm.total)
    np.testing.assert_allclose(kronecker_apply(ks, x), x)


def test_full_level2_matches_dense_kron():
    kinds = (DIRICHLET_HAT, DIRICHLET_HAT)
    dm = build_space_map(kinds, 2, "full")
    rng = np.random.default_rng(5)
    A1, A2 = random_spd(3, 1), random_spd(3, 2)
    B1, B2 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    ks = KroneckerSum([(A1, B1), (A2, B2)], dm)
    # full map with both levels complete is a permutation of the natural ordering
    perm = dm.rows * 3 + dm.cols
    dense = (np.kron(A1, B1) + np.kron(A2, B2))[np.ix_(perm, perm)]
    x = rng.standard_normal(dm.total)
    np.testing.assert_allclose(kronecker_apply(ks, x), dense @ x, atol=1e-13)


def test_sparse_level3_matches_inter_level_integrals():
    """Galerkin matrix of (a M_const) x (b K_periodic) from direct quadrature."""
    L = 3
    kinds = (PIECEWISE_CONSTANT, PERIODIC_HAT)
    dm = build_space_map(kinds, L, "sparse")
    a = lambda x: 1.0 + x
    b = lambda y: 2.0 + np.cos(2 * np.pi * y)
    x, w = gauss_rule(L + 2)
    Px = closed_form_details(PIECEWISE_CONSTANT, L, x)
    Dy = closed_form_detail_slopes(L, x)
    Mx = Px.T @ ((w * a(x))[:, None] * Px)
    Ky = Dy.T @ ((w * b(x))[:, None] * Dy)
    dense = Mx[np.ix_(dm.rows, dm.rows)] * Ky[np.ix_(dm.cols, dm.cols)]

    s_c, s_p = synthesis_matrix(PIECEWISE_CONSTANT, L), synthesis_matrix(PERIODIC_HAT, L)
    mx = s_c.T @ gram_matrix_1d(L, PIECEWISE_CONSTANT, PIECEWISE_CONSTANT, a) @ s_c
    ky = s_p.T @ gram_matrix_1d(L, PERIODIC_HAT, PERIODIC_HAT, b, 1, 1) @ s_p
    ks = KroneckerSum([(mx, ky)], dm)
    np.testing.assert_allclose(to_dense(ks), dense, atol=1e-12)
    np.testing.assert_allclose(ks.diagonal(), np.diag(dense), atol=1e-12)


def test_kronecker_length_mismatch():
    dm = build_space_map((DIRICHLET_HAT, DIRICHLET_HAT), 2, "sparse")
    ks = KroneckerSum([(sp.eye(3), sp.eye(3))], dm)
    with pytest.raises(InvalidRequestError):
        kronecker_apply(ks, np.ones(dm.total + 1))


def test_kronecker_term_shape_mismatch():
    dm = build_space_map((DIRICHLET_HAT, DIRICHLET_HAT), 2, "sparse")
    with pytest.raises(InvalidRequestError):
        KroneckerSum([(sp.eye(3), sp.eye(4))], dm)


def test_symmetry_probe_on_kronecker_sum():
    L = 5
    dm = build_space_map((DIRICHLET_HAT, DIRICHLET_HAT), L, "sparse")
    s = synthesis_matrix(DIRICHLET_HAT, L)
    k = s.T @ gram_matrix_1d(L, DIRICHLET_HAT, DIRICHLET_HAT, lambda x: 1 + x, 1, 1) @ s
    assert symmetry_defect(KroneckerSum([(k, k)], dm)) <= 1e-10
