"""Moments of the solution of ``-(A u')' = f(x, omega)`` with a random source.

The source is finite-rank Gaussian, ``f = E_f + sum_r xi_r g_r`` with
independent standard normal ``xi_r``. The mean field solves the deterministic
problem with ``E_f``; the covariance solves the tensorized problem

    int int A(x) A(x') d_x d_x' C  d_x d_x' V  dx dx' = int int C_f V

on the sparse tensor space of Dirichlet hats with ``C_f = sum_r g_r (x) g_r``.
The second moment is the covariance plus ``E_u (x) E_u``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as sla

from .errors import ConvergenceError, InconsistencyError, InvalidCoefficientError, InvalidRequestError
from .hierarchy import (
    DIRICHLET_HAT,
    Coefficient,
    NodalFunction,
    evaluate_coefficient,
    gauss_rule,
    gram_matrix_1d,
    interpolation_matrix,
    load_vector_1d,
    synthesis_matrix,
)
from .krylov import DEFAULT_TOL, KroneckerSum, cg_solve, diagonal_preconditioner
from .reference import fe_solve
from .tensor_index import Mode, TensorDofMap, build_space_map

CORRELATION_KINDS = (DIRICHLET_HAT, DIRICHLET_HAT)
GENERATOR = "numpy.random.PCG64"
MC_CHUNK = 256
DEFAULT_POINTS = np.arange(1, 6) / 6.0


@dataclass(frozen=True)
class RandomSourceModel:
    mean: Coefficient = 0.0
    modes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))

    @property
    def rank(self) -> int:
        return len(self.modes)

    def correlation(self, x, xp):
        """``C_f(x, x') = E_f(x) E_f(x') + sum_r g_r(x) g_r(x')``."""
        x, xp = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xp, dtype=float))
        out = evaluate_coefficient(self.mean, x) * evaluate_coefficient(self.mean, xp)
        for g in self.modes:
            out = out + evaluate_coefficient(g, x) * evaluate_coefficient(g, xp)
        return out


def rank1_model() -> RandomSourceModel:
    return RandomSourceModel(0.0, (1.0,))


def rank2_model() -> RandomSourceModel:
    return RandomSourceModel(1.0, (1.0, lambda x: np.sin(np.pi * x)))


def deterministic_model() -> RandomSourceModel:
    return RandomSourceModel(1.0, ())


BUILTIN_MODELS = {"rank1": rank1_model, "rank2": rank2_model, "deterministic": deterministic_model}


def _check_positive(A: Coefficient, level: int) -> None:
    x, _ = gauss_rule(level)
    a = evaluate_coefficient(A, x)
    if not np.all(np.isfinite(a)) or a.min() <= 0.0:
        raise InvalidCoefficientError("diffusion coefficient must be positive and bounded")


def solve_mean_field(A: Coefficient, mean_source: Coefficient, level: int) -> NodalFunction:
    """Mean field: ``-(A E_u')' = E_f`` with zero boundary values."""
    _check_positive(A, level)
    return fe_solve(A, mean_source, level)


def assemble_correlation_operator(A: Coefficient, level: int, mode="sparse") -> KroneckerSum:
    """The operator ``K_A (x) K_A`` restricted to the (sparse) tensor space."""
    L = int(level)
    if L < 1:
        raise InvalidRequestError(f"level must be at least 1, got {level}")
    _check_positive(A, L)
    dof_map = build_space_map(CORRELATION_KINDS, L, mode)
    s = synthesis_matrix(DIRICHLET_HAT, L)
    k = (s.T @ gram_matrix_1d(L, DIRICHLET_HAT, DIRICHLET_HAT, A, 1, 1) @ s).tocsr()
    return KroneckerSum([(k, k)], dof_map)


@dataclass(frozen=True)
class CorrelationSolution:
    """Covariance in the tensor detail basis, with its nodal values cached.

    ``nodal[i, j]`` is the value at interior nodes ``(x_i, x_j)`` of level ``level``.
    """

    dof_map: TensorDofMap
    coeffs: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    nodal: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.nodal is None:
            s = synthesis_matrix(DIRICHLET_HAT, self.level)
            full = self.dof_map.scatter(self.coeffs)
            object.__setattr__(self, "nodal", (s @ (s @ full).T).T)

    @property
    def level(self) -> int:
        return self.dof_map.max_level

    @property
    def mode(self) -> Mode:
        return self.dof_map.mode

    def grid(self, x, xp, dx: int = 0, dxp: int = 0) -> np.ndarray:
        """Values (or mixed derivatives) on the tensor grid ``x x xp``."""
        bx = interpolation_matrix(DIRICHLET_HAT, self.level, x, dx)
        by = interpolation_matrix(DIRICHLET_HAT, self.level, xp, dxp)
        return (by @ (bx @ self.nodal).T).T

    def __call__(self, x, xp):
        x, xp = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xp, dtype=float))
        bx = interpolation_matrix(DIRICHLET_HAT, self.level, x.ravel())
        by = interpolation_matrix(DIRICHLET_HAT, self.level, xp.ravel())
        return np.asarray(by.multiply(bx @ self.nodal).sum(axis=1)).reshape(x.shape)


def correlation_load(model: RandomSourceModel, dof_map: TensorDofMap) -> np.ndarray:
    """Right-hand side ``sum_r m_r (x) m_r`` restricted to ``dof_map``."""
    L = dof_map.max_level
    s = synthesis_matrix(DIRICHLET_HAT, L)
    full = np.zeros(dof_map.shape_1d)
    for g in model.modes:
        m = s.T @ load_vector_1d(L, DIRICHLET_HAT, g)
        full += np.outer(m, m)
    return dof_map.gather(full)


def solve_correlation(op: KroneckerSum, model: RandomSourceModel, tol: float = DEFAULT_TOL) -> CorrelationSolution:
    """Covariance of the random solution (fluctuating part of the source only).

    The result is symmetrized under the swap of the two factors.
    """
    dof_map = op.dof_map
    rhs = correlation_load(model, dof_map)
    precond = diagonal_preconditioner(op) if dof_map.total else None
    res = cg_solve(op, rhs, precond=precond, tol=tol)
    if not res.converged:
        raise ConvergenceError(
            f"CG stopped after {res.iterations} iterations at relative residual {res.residual:.3e}"
        )
    c = res.solution
    c = 0.5 * (c + c[dof_map.transpose_permutation()])
    return CorrelationSolution(dof_map, c, res.iterations, res.residual)


def evaluate_correlation(sol: CorrelationSolution, x, xp):
    return sol(x, xp)


def second_moment(mean_field: NodalFunction, sol: CorrelationSolution, x, xp):
    """Full two-point correlation ``E[u(x) u(x')]``."""
    return sol(x, xp) + mean_field(x) * mean_field(xp)


def variance_field(mean_field: NodalFunction, sol: CorrelationSolution, points, clamp: bool = True) -> np.ndarray:
    """``Var u(x) = E[u(x)^2] - E_u(x)^2``.

    Negative values down to ``-1e-6`` are treated as roundoff and clamped to
    zero when ``clamp`` is set; anything below raises.
    """
    x = np.asarray(points, dtype=float)
    eu = mean_field(x)
    var = second_moment(mean_field, sol, x, x) - eu**2
    if np.any(var < -1e-6):
        raise InconsistencyError(f"variance {var.min():.3e} is negative beyond roundoff")
    return np.maximum(var, 0.0) if clamp else var


@dataclass(frozen=True)
class MCEstimate:
    points: np.ndarray
    mean: np.ndarray
    correlation: np.ndarray
    mean_se: np.ndarray
    correlation_se: np.ndarray
    samples: int
    seed: int
    generator: str = GENERATOR


def mc_estimate(
    model: RandomSourceModel,
    A: Coefficient,
    level: int,
    samples: int,
    seed: int,
    points=DEFAULT_POINTS,
) -> MCEstimate:
    """Monte Carlo estimate of the mean and two-point correlation on ``points``.

    Every sample solves the level-``level`` finite element problem with
    ``f = E_f + sum_r xi_r g_r``. Samples are drawn in chunks of ``MC_CHUNK``,
    each from its own stream spawned from ``seed``, so results do not depend on
    how chunks are scheduled.
    """
    if samples < 100:
        raise InvalidRequestError(f"at least 100 samples are required, got {samples}")
    _check_positive(A, level)
    pts = np.asarray(points, dtype=float)
    K = gram_matrix_1d(level, DIRICHLET_HAT, DIRICHLET_HAT, A, 1, 1).tocsc()
    lu = sla.splu(K)
    b_mean = load_vector_1d(level, DIRICHLET_HAT, model.mean)
    B = np.column_stack([load_vector_1d(level, DIRICHLET_HAT, g) for g in model.modes]) if model.rank else None
    P = interpolation_matrix(DIRICHLET_HAT, level, pts)

    u_mean = P @ lu.solve(b_mean)
    if model.rank == 0:
        zero = np.zeros(pts.size)
        return MCEstimate(pts, u_mean, np.outer(u_mean, u_mean), zero, np.zeros((pts.size, pts.size)), samples, seed)

    n_chunks = -(-samples // MC_CHUNK)
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    values = np.empty((pts.size, samples))
    for c, ss in enumerate(streams):
        start = c * MC_CHUNK
        stop = min(samples, start + MC_CHUNK)
        xi = np.random.Generator(np.random.PCG64(ss)).standard_normal((stop - start, model.rank))
        U = lu.solve(np.asarray(b_mean[:, None] + B @ xi.T, order="F"))
        values[:, start:stop] = P @ U
    products = values[:, None, :] * values[None, :, :]
    return MCEstimate(
        pts,
        values.mean(axis=1),
        products.mean(axis=2),
        values.std(axis=1, ddof=1) / np.sqrt(samples),
        products.std(axis=2, ddof=1) / np.sqrt(samples),
        samples,
        seed,
    )


def solve_moments(model: RandomSourceModel, A: Coefficient, level: int, mode="sparse", tol: float = DEFAULT_TOL):
    """Mean field and covariance solution for one model."""
    mean = solve_mean_field(A, model.mean, level)
    cov = solve_correlation(assemble_correlation_operator(A, level, mode), model, tol)
    return mean, cov


def compare_with_mc(
    model: RandomSourceModel,
    A: Coefficient,
    level: int,
    samples: int,
    seed: int,
    mode="sparse",
    points=DEFAULT_POINTS,
    tol: float = DEFAULT_TOL,
) -> dict:
    """Deterministic second moment against Monte Carlo on a point grid.

    The discretization allowance at each point is the change of the
    deterministic value between levels ``level - 1`` and ``level``. A point
    passes when ``|det - mc| <= 4 se + allowance``.
    """
    pts = np.asarray(points, dtype=float)
    mean, cov = solve_moments(model, A, level, mode, tol)
    X, XP = np.meshgrid(pts, pts, indexing="ij")
    det = second_moment(mean, cov, X, XP)
    if level > 1:
        mean_c, cov_c = solve_moments(model, A, level - 1, mode, tol)
        allowance = np.abs(det - second_moment(mean_c, cov_c, X, XP))
    else:
        allowance = np.zeros_like(det)
    mc = mc_estimate(model, A, level, samples, seed, pts)
    diff = np.abs(det - mc.correlation)
    ok = diff <= 4.0 * mc.correlation_se + allowance
    rows = []
    for i in range(pts.size):
        for j in range(pts.size):
            se = float(mc.correlation_se[i, j])
            rows.append({
                "x": float(pts[i]),
                "xp": float(pts[j]),
                "deterministic": float(det[i, j]),
                "mc": float(mc.correlation[i, j]),
                "se": se,
                "abs_diff": float(diff[i, j]),
                "diff_over_se": float(diff[i, j] / se) if se > 0 else None,
                "allowance": float(allowance[i, j]),
                "pass": bool(ok[i, j]),
            })
    return {
        "pass": bool(ok.all()),
        "within_4se": bool(np.all(diff <= 4.0 * mc.correlation_se)),
        "max_abs_diff": float(diff.max()),
        "samples": samples,
        "seed": seed,
        "generator": GENERATOR,
        "level": level,
        "mode": Mode.parse(mode).value,
        "grid": rows,
    }
