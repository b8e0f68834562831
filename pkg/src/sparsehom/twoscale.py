"""Sparse tensor discretization of the unfolded two-scale limit problem.

Unknowns are the macroscopic solution ``u`` in the Dirichlet hats of level
``L`` on D = (0, 1) and the corrector ``phi`` in the tensor space of piecewise
constants on D times periodic hats (modulo constants) on Y = (0, 1). The
coupled bilinear form is

    B(u, phi; v, psi) = int_D int_Y (v' + psi_y) A(x, y) (u' + phi_y) dy dx

with a separable coefficient ``A(x, y) = sum_k a_k(x) b_k(y)``. All blocks are
assembled in the multilevel detail bases, where the sparse space is a plain
index selection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .errors import ConvergenceError, InvalidCoefficientError, InvalidRequestError
from .hierarchy import (
    DIRICHLET_HAT,
    PERIODIC_HAT,
    PIECEWISE_CONSTANT,
    Coefficient,
    NodalFunction,
    evaluate_coefficient,
    gauss_rule,
    gram_matrix_1d,
    integrate,
    interpolation_matrix,
    load_vector_1d,
    synthesis_matrix,
)
from .krylov import DEFAULT_TOL, CGResult, KroneckerSum, cg_solve, diagonal_preconditioner
from .tensor_index import Mode, TensorDofMap, build_space_map

CORRECTOR_KINDS = (PIECEWISE_CONSTANT, PERIODIC_HAT)


@dataclass(frozen=True)
class SeparableCoefficient:
    """``A(x, y) = sum_k a_k(x) b_k(y)``, 1-periodic in ``y``.

    ``alpha`` is the ellipticity constant: ``alpha <= A <= 1/alpha``.
    """

    terms: tuple
    alpha: float

    def __post_init__(self):
        terms = tuple((a, b) for a, b in self.terms)
        if not terms:
            raise InvalidCoefficientError("coefficient needs at least one term")
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidCoefficientError(f"ellipticity constant must lie in (0, 1], got {self.alpha}")
        object.__setattr__(self, "terms", terms)
        for k, (_, b) in enumerate(terms):
            b0, b1 = evaluate_coefficient(b, np.array([0.0, 1.0]))
            if abs(b0 - b1) > 1e-12:
                raise InvalidCoefficientError(f"term {k}: b(0) = {b0} differs from b(1) = {b1}")

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        out = np.zeros(x.shape)
        for a, b in self.terms:
            out += evaluate_coefficient(a, x) * evaluate_coefficient(b, y)
        return out

    def grid(self, x, y) -> np.ndarray:
        """Values on the tensor grid ``x[:, None], y[None, :]``."""
        ax = np.column_stack([evaluate_coefficient(a, x) for a, _ in self.terms])
        by = np.column_stack([evaluate_coefficient(b, y) for _, b in self.terms])
        return ax @ by.T

    def check_ellipticity(self, x, y) -> None:
        values = self.grid(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        lo, hi = values.min(), values.max()
        tol = 1e-12
        if lo < self.alpha - tol or hi > 1.0 / self.alpha + tol:
            raise InvalidCoefficientError(
                f"coefficient range [{lo:.6g}, {hi:.6g}] violates ellipticity bounds "
                f"[{self.alpha:.6g}, {1.0 / self.alpha:.6g}]"
            )

    def oscillating(self, epsilon: float) -> Callable[[np.ndarray], np.ndarray]:
        """The single-scale coefficient ``x -> A(x, {x / epsilon})``."""
        def a_eps(x):
            x = np.asarray(x, dtype=float)
            return self(x, np.mod(x / epsilon, 1.0))
        return a_eps


def constant_coefficient(c: float = 1.0) -> SeparableCoefficient:
    return SeparableCoefficient(((float(c), 1.0),), alpha=min(c, 1.0 / c))


def sin_cell_coefficient() -> SeparableCoefficient:
    """``A(y) = 1 / (2 + sin 2 pi y)``, with homogenized value 1/2."""
    return SeparableCoefficient(((1.0, lambda y: 1.0 / (2.0 + np.sin(2 * np.pi * y))),), alpha=1.0 / 3.0)


def sin_cell_x_coefficient() -> SeparableCoefficient:
    """``A(x, y) = (1 + x) / (2 + sin 2 pi y)``."""
    return SeparableCoefficient(
        ((lambda x: 1.0 + x, lambda y: 1.0 / (2.0 + np.sin(2 * np.pi * y))),), alpha=1.0 / 3.0
    )


def check_epsilon(epsilon: float) -> int:
    """Return ``log2(1/epsilon)``; raise unless ``1/epsilon`` is a power of two."""
    if not 0.0 < epsilon <= 1.0:
        raise InvalidRequestError(f"epsilon must lie in (0, 1], got {epsilon}")
    inv = 1.0 / epsilon
    k = int(round(math.log2(inv)))
    if abs(2.0**k - inv) > 1e-9 * inv:
        raise InvalidRequestError(f"1/epsilon must be a power of two, got epsilon = {epsilon}")
    return k


@dataclass(frozen=True)
class EpsilonProblem:
    """``-(A(x, {x/eps}) u')' = f`` on (0, 1) with ``u(0) = u(1) = 0``."""

    epsilon: float
    coefficient: SeparableCoefficient
    source: Coefficient

    def __post_init__(self):
        check_epsilon(self.epsilon)


class TwoScaleSystem(LinearOperator):
    """Galerkin system of the unfolded problem in detail bases.

    The unknown vector is ``[u, phi]`` with ``u`` in hierarchical Dirichlet
    hats (length ``2**L - 1``) and ``phi`` indexed by ``dof_map``.
    """

    def __init__(self, level, mode, dof_map, b_uu, coupling, b_phiphi, load_u, coefficient):
        self.level = level
        self.mode = mode
        self.dof_map = dof_map
        self.b_uu = b_uu
        self.coupling = tuple(coupling)
        self.b_phiphi = b_phiphi
        self.coefficient = coefficient
        self.n_u = b_uu.shape[0]
        self.n_phi = dof_map.total
        self.load = np.concatenate([load_u, np.zeros(self.n_phi)])
        n = self.n_u + self.n_phi
        super().__init__(dtype=float, shape=(n, n))

    def _split(self, x):
        x = np.ravel(x)
        return x[: self.n_u], x[self.n_u:]

    def _matvec(self, x):
        u, phi = self._split(x)
        Phi = self.dof_map.scatter(phi)
        top = self.b_uu @ u
        bottom_full = np.zeros_like(Phi)
        for gx, gy in self.coupling:
            top += gx @ (Phi @ gy)
            bottom_full += np.outer(gx.T @ u, gy)
        bottom = self.b_phiphi.matvec(phi) + self.dof_map.gather(bottom_full)
        return np.concatenate([top, bottom])

    _rmatvec = _matvec

    def diagonal(self) -> np.ndarray:
        return np.concatenate([self.b_uu.diagonal(), self.b_phiphi.diagonal()])

    def coupling_matrix(self) -> np.ndarray:
        """Dense ``B_u,phi`` block (rows: u details, columns: phi dofs)."""
        out = np.zeros((self.n_u, self.n_phi))
        r, c = self.dof_map.rows, self.dof_map.cols
        for gx, gy in self.coupling:
            out += gx.toarray()[:, r] * gy[c][None, :]
        return out

    def energy(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.matvec(w))


def assemble_two_scale(coeff: SeparableCoefficient, f: Coefficient, level: int, mode="sparse") -> TwoScaleSystem:
    """Assemble the discrete unfolded problem on level ``level``.

    Raises
    ------
    InvalidCoefficientError
        If the coefficient leaves ``[alpha, 1/alpha]`` at a quadrature point.
    """
    L = int(level)
    if L < 1:
        raise InvalidRequestError(f"level must be at least 1, got {level}")
    mode = Mode.parse(mode)
    xq, _ = gauss_rule(L)
    coeff.check_ellipticity(xq, xq)

    dof_map = build_space_map(CORRECTOR_KINDS, L, mode)
    s_u = synthesis_matrix(DIRICHLET_HAT, L)
    s_c = synthesis_matrix(PIECEWISE_CONSTANT, L)
    s_p = synthesis_matrix(PERIODIC_HAT, L)

    b_uu = sp.csr_matrix((s_u.shape[1], s_u.shape[1]))
    coupling = []
    kron_terms = []
    for a, b in coeff.terms:
        mean_b = integrate(b, level=max(L, 6))
        b_uu = b_uu + mean_b * (s_u.T @ gram_matrix_1d(L, DIRICHLET_HAT, DIRICHLET_HAT, a, 1, 1) @ s_u)
        gx = (s_u.T @ gram_matrix_1d(L, DIRICHLET_HAT, PIECEWISE_CONSTANT, a, 1, 0) @ s_c).tocsr()
        gy = s_p.T @ load_vector_1d(L, PERIODIC_HAT, b, derivative=1)
        coupling.append((gx, gy))
        mx = s_c.T @ gram_matrix_1d(L, PIECEWISE_CONSTANT, PIECEWISE_CONSTANT, a) @ s_c
        my = s_p.T @ gram_matrix_1d(L, PERIODIC_HAT, PERIODIC_HAT, b, 1, 1) @ s_p
        kron_terms.append((mx, my))
    load_u = s_u.T @ load_vector_1d(L, DIRICHLET_HAT, f)
    return TwoScaleSystem(
        L, mode, dof_map, b_uu.tocsr(), coupling, KroneckerSum(kron_terms, dof_map), load_u, coeff
    )


@dataclass(frozen=True)
class TwoScaleSolution:
    """Discrete ``(u, phi)``; ``phi(x, .)`` is represented with ``phi(x, 0) = 0``."""

    u: NodalFunction
    phi: np.ndarray
    dof_map: TensorDofMap
    mode: Mode
    level: int
    iterations: int = 0
    residual: float = 0.0
    phi_nodal: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.phi_nodal is None:
            Phi = self.dof_map.scatter(self.phi)
            s_c = synthesis_matrix(PIECEWISE_CONSTANT, self.level)
            s_p = synthesis_matrix(PERIODIC_HAT, self.level)
            # rows: level-L cells in x; columns: interior level-L nodes in y
            nodal = (s_p @ (s_c @ Phi).T).T
            object.__setattr__(self, "phi_nodal", nodal)

    @property
    def dofs(self) -> int:
        return self.u.coeffs.size + self.phi.size

    def _phi_eval(self, x, y, dy):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        bx = interpolation_matrix(PIECEWISE_CONSTANT, self.level, x.ravel())
        by = interpolation_matrix(PERIODIC_HAT, self.level, y.ravel(), derivative=int(dy))
        vals = np.asarray(by.multiply(bx @ self.phi_nodal).sum(axis=1)).ravel()
        return vals.reshape(x.shape)

    def phi_value(self, x, y):
        return self._phi_eval(x, y, False)

    def phi_dy(self, x, y):
        return self._phi_eval(x, y, True)

    def phi_grid(self, x, y, dy: bool = False) -> np.ndarray:
        """``phi`` (or ``phi_y``) on the tensor grid ``x[:, None], y[None, :]``."""
        bx = interpolation_matrix(PIECEWISE_CONSTANT, self.level, x)
        by = interpolation_matrix(PERIODIC_HAT, self.level, y, derivative=int(dy))
        return (by @ (bx @ self.phi_nodal).T).T


def solve_two_scale(sys: TwoScaleSystem, tol: float = DEFAULT_TOL, maxit=None) -> TwoScaleSolution:
    """Solve the assembled system by diagonally preconditioned CG.

    Raises
    ------
    ConvergenceError
        If CG does not reach ``tol`` within ``maxit`` iterations.
    """
    res: CGResult = cg_solve(sys, sys.load, precond=diagonal_preconditioner(sys), tol=tol, maxit=maxit)
    if not res.converged:
        raise ConvergenceError(
            f"CG stopped after {res.iterations} iterations at relative residual {res.residual:.3e}"
        )
    u_d, phi = res.solution[: sys.n_u], res.solution[sys.n_u:]
    u = NodalFunction(DIRICHLET_HAT, sys.level, synthesis_matrix(DIRICHLET_HAT, sys.level) @ u_d)
    return TwoScaleSolution(u, phi, sys.dof_map, sys.mode, sys.level, res.iterations, res.residual)


def unfold(g: NodalFunction, epsilon: float) -> Callable:
    """Unfolding of ``g`` at scale ``epsilon``.

    Returns a vectorized callable ``(x, y) -> g(eps * floor(x / eps) + eps * y)``
    (broadcasting ``x`` against ``y``). With ``1/eps`` an integer every cell
    lies inside D, so the zero branch of the operator never applies.
    """
    k = check_epsilon(epsilon)
    if g.level < k:
        raise InvalidRequestError(
            f"mesh level {g.level} does not resolve epsilon = {epsilon} (needs level >= {k})"
        )
    n_cells = 2**k

    def unfolded(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        cell = np.clip(np.floor(x * n_cells), 0, n_cells - 1)
        return g((cell + y) / n_cells)

    return unfolded


def reconstruct_fine_gradient(sol: TwoScaleSolution, epsilon: float, points) -> np.ndarray:
    """``u'(x) + phi_y(x, {x / eps})`` at the given points."""
    check_epsilon(epsilon)
    x = np.asarray(points, dtype=float)
    return sol.u.derivative(x) + sol.phi_dy(x, np.mod(x / epsilon, 1.0))
