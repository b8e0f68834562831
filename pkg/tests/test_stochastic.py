import numpy as np
import pytest

from sparsehom.errors import InconsistencyError, InvalidCoefficientError, InvalidRequestError
from sparsehom.hierarchy import gauss_rule
from sparsehom.krylov import symmetry_defect, to_dense
from sparsehom.hierarchy import DIRICHLET_HAT, gram_matrix_1d
from sparsehom.stochastic import (
    GENERATOR,
    RandomSourceModel,
    assemble_correlation_operator,
    compare_with_mc,
    deterministic_model,
    evaluate_correlation,
    mc_estimate,
    rank1_model,
    rank2_model,
    second_moment,
    solve_correlation,
    solve_mean_field,
    solve_moments,
    variance_field,
)
from sparsehom.tensor_index import verify_dof_bound


def u1(x):
    return x * (1 - x) / 2


def du1(x):
    return 0.5 - x


def u2(x):
    return np.sin(np.pi * x) / np.pi**2


@pytest.fixture(scope="module")
def rank1_l6():
    return solve_correlation(assemble_correlation_operator(1.0, 6), rank1_model())


@pytest.fixture(scope="module")
def rank2_l6():
    return solve_moments(rank2_model(), 1.0, 6)


# -- mean field ---------------------------------------------------------------------------

@pytest.mark.parametrize("A, ef, expected", [(1.0, 1.0, 0.125), (1.0, 0.0, 0.0), (2.0, 1.0, 0.0625)])
def test_mean_field(A, ef, expected):
    assert solve_mean_field(A, ef, 8)(np.array([0.5]))[0] == pytest.approx(expected, abs=1e-6)


def test_mean_field_rejects_nonpositive():
    with pytest.raises(InvalidCoefficientError):
        solve_mean_field(lambda x: x - 0.5, 1.0, 4)


# -- correlation operator ---------------------------------------------------------------------

def test_operator_full_level2_is_kron():
    op = assemble_correlation_operator(1.0, 2, "full")
    K = gram_matrix_1d(2, DIRICHLET_HAT, DIRICHLET_HAT, 1.0, 1, 1).toarray()
    from sparsehom.hierarchy import synthesis_matrix
    S = synthesis_matrix(DIRICHLET_HAT, 2).toarray()
    Kd = S.T @ K @ S
    perm = op.dof_map.rows * 3 + op.dof_map.cols
    np.testing.assert_allclose(to_dense(op), np.kron(Kd, Kd)[np.ix_(perm, perm)], atol=1e-12)


def test_operator_sparse_level1_single_dof():
    assert assemble_correlation_operator(1.0, 1).shape == (1, 1)


def test_operator_symmetric():
    op = assemble_correlation_operator(lambda x: 1 + x, 5)
    assert symmetry_defect(op) <= 1e-10
    assert np.linalg.eigvalsh(to_dense(op)).min() > 0


def test_operator_level_checked():
    with pytest.raises(InvalidRequestError):
        assemble_correlation_operator(1.0, 0)


# -- correlation solutions --------------------------------------------------------------------------

def test_rank1_values(rank1_l6):
    assert evaluate_correlation(rank1_l6, 0.5, 0.5) == pytest.approx(1 / 64, abs=1e-3)
    assert evaluate_correlation(rank1_l6, 0.25, 0.5) == pytest.approx(3 / 256, abs=1e-3)


def test_rank1_boundary_and_symmetry(rank1_l6):
    assert evaluate_correlation(rank1_l6, 0.0, 0.4) == 0.0
    assert evaluate_correlation(rank1_l6, 0.3, 0.7) == pytest.approx(evaluate_correlation(rank1_l6, 0.7, 0.3), abs=1e-10)


def test_zero_modes_zero_solution():
    sol = solve_correlation(assemble_correlation_operator(1.0, 4), deterministic_model())
    assert np.all(sol.coeffs == 0.0)


def test_rank2_superposition(rank2_l6):
    _, cov = rank2_l6
    exact = u1(0.25) * u1(0.75) + u2(0.25) * u2(0.75)
    assert evaluate_correlation(cov, 0.25, 0.75) == pytest.approx(exact, abs=1e-3)


def test_rank1_determinant_identity(rank1_l6):
    x, xp, z, zp = 0.2, 0.45, 0.6, 0.85
    lhs = rank1_l6(x, xp) * rank1_l6(z, zp)
    rhs = rank1_l6(x, zp) * rank1_l6(z, xp)
    coarse = solve_correlation(assemble_correlation_operator(1.0, 5), rank1_model())
    disc = abs(rank1_l6(x, xp) - coarse(x, xp)) + abs(rank1_l6(z, zp) - coarse(z, zp))
    assert abs(lhs - rhs) <= 2 * disc * max(abs(lhs), 1e-3) + 1e-12


def test_sparse_rate_h11():
    x, w = gauss_rule(10)
    errs = []
    for L in range(3, 8):
        sol = solve_correlation(assemble_correlation_operator(1.0, L), rank1_model())
        total = 0.0
        for dx in (0, 1):
            for dy in (0, 1):
                ex = np.outer((u1, du1)[dx](x), (u1, du1)[dy](x))
                total += w @ (ex - sol.grid(x, x, dx, dy)) ** 2 @ w
        errs.append(np.sqrt(total))
    eoc = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(eoc >= 0.85), eoc


def test_correlation_dof_bound():
    table = verify_dof_bound((DIRICHLET_HAT, DIRICHLET_HAT), 8)
    assert max(row[3] for row in table) <= 1.5 * table[0][3]


# -- variance ---------------------------------------------------------------------------------

def test_variance_rank1(rank1_l6):
    mean = solve_mean_field(1.0, 0.0, 6)
    var = variance_field(mean, rank1_l6, np.linspace(0, 1, 33), clamp=False)
    assert var.min() >= -1e-10
    assert variance_field(mean, rank1_l6, [0.5])[0] == pytest.approx(1 / 64, abs=1e-3)


def test_variance_zero_modes():
    mean, cov = solve_moments(deterministic_model(), 1.0, 5)
    np.testing.assert_allclose(variance_field(mean, cov, np.linspace(0, 1, 9)), 0.0, atol=1e-14)


def test_variance_rank2(rank2_l6):
    mean, cov = rank2_l6
    assert variance_field(mean, cov, [0.5])[0] == pytest.approx(1 / 64 + 1 / np.pi**4, abs=2e-3)


def test_variance_inconsistency_raises(rank1_l6):
    big_mean = solve_mean_field(1.0, 100.0, 6)
    from dataclasses import replace
    negative = replace(rank1_l6, coeffs=-rank1_l6.coeffs, nodal=None)
    with pytest.raises(InconsistencyError):
        variance_field(big_mean, negative, [0.5])


def test_second_moment_adds_mean(rank2_l6):
    mean, cov = rank2_l6
    m = mean(np.array([0.3]))[0] * mean(np.array([0.6]))[0]
    assert second_moment(mean, cov, 0.3, 0.6) == pytest.approx(cov(0.3, 0.6) + m)


# -- Monte Carlo ----------------------------------------------------------------------------------

def test_mc_deterministic_exact():
    est = mc_estimate(deterministic_model(), 1.0, 5, 100, 0)
    u = solve_mean_field(1.0, 1.0, 5)(est.points)
    np.testing.assert_allclose(est.correlation, np.outer(u, u), atol=1e-15)
    assert np.all(est.correlation_se == 0.0)


def test_mc_rank1_within_four_se():
    est = mc_estimate(rank1_model(), 1.0, 6, 4096, 3, points=[0.5])
    assert abs(est.correlation[0, 0] - 1 / 64) <= 4 * est.correlation_se[0, 0]


def test_mc_seeds_differ_but_agree():
    a = compare_with_mc(rank1_model(), 1.0, 6, 4096, 1)
    b = compare_with_mc(rank1_model(), 1.0, 6, 4096, 2)
    assert a["grid"][12]["mc"] != b["grid"][12]["mc"]
    assert a["within_4se"] and b["within_4se"]


def test_mc_reproducible():
    a = mc_estimate(rank2_model(), 1.0, 5, 300, 42)
    b = mc_estimate(rank2_model(), 1.0, 5, 300, 42)
    np.testing.assert_array_equal(a.correlation, b.correlation)
    assert a.generator == GENERATOR


def test_mc_minimum_samples():
    with pytest.raises(InvalidRequestError):
        mc_estimate(rank1_model(), 1.0, 5, 99, 0)


def test_compare_small_sample_still_passes():
    assert compare_with_mc(rank1_model(), 1.0, 6, 100, 5)["pass"]


def test_compare_deterministic_model():
    rep = compare_with_mc(deterministic_model(), 1.0, 6, 100, 0)
    assert rep["max_abs_diff"] <= 1e-10
    assert len(rep["grid"]) == 25


def test_model_correlation_symmetric():
    m = RandomSourceModel(lambda x: x, (1.0, np.cos))
    x, xp = np.array([0.1, 0.8]), np.array([0.5, 0.3])
    np.testing.assert_allclose(m.correlation(x, xp), m.correlation(xp, x))
