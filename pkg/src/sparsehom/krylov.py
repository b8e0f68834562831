"""Conjugate gradients, diagonal preconditioning and matrix-free Kronecker sums.

Operators are carried as :class:`scipy.sparse.linalg.LinearOperator` objects
(dimension = ``shape[0]``, apply = ``matvec``). Anything accepted by
:func:`scipy.sparse.linalg.aslinearoperator` works as input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .errors import InvalidOperatorError, InvalidRequestError, NumericalBreakdownError
from .tensor_index import TensorDofMap

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class CGResult:
    solution: np.ndarray
    iterations: int
    residual: float
    converged: bool


def _as_operator(op) -> LinearOperator:
    if isinstance(op, LinearOperator):
        return op
    return aslinearoperator(op)


def cg_solve(
    op,
    rhs,
    precond=None,
    tol: float = DEFAULT_TOL,
    maxit: Optional[int] = None,
    x0=None,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> CGResult:
    """Preconditioned conjugate gradients for a symmetric positive definite ``op``.

    Stops when ``||rhs - op @ x|| <= tol * ||rhs||`` (Euclidean norms, with the
    residual recomputed explicitly at the end) or after ``maxit`` iterations,
    which defaults to ``10 * n``. Hitting ``maxit`` is reported through
    ``converged=False`` rather than raised.

    Raises
    ------
    NumericalBreakdownError
        If a non-finite value or a nonpositive curvature ``p.T A p`` appears.
    """
    if tol <= 0:
        raise InvalidRequestError(f"tol must be positive, got {tol}")
    A = _as_operator(op)
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise InvalidRequestError(f"operator shape {A.shape} does not match rhs length {n}")
    M = None if precond is None else _as_operator(precond)
    maxit = 10 * n if maxit is None else int(maxit)

    bnorm = np.linalg.norm(b)
    if not np.isfinite(bnorm):
        raise NumericalBreakdownError("right-hand side is not finite")
    if n == 0 or bnorm == 0.0:
        return CGResult(np.zeros(n), 0, 0.0, True)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A.matvec(x) if x0 is not None else b.copy()
    z = r if M is None else M.matvec(r)
    p = z.copy()
    rz = r @ z
    it = 0
    while np.linalg.norm(r) > tol * bnorm and it < maxit:
        q = A.matvec(p)
        pq = p @ q
        if not np.isfinite(pq) or pq <= 0.0:
            raise NumericalBreakdownError(f"curvature p.Ap = {pq} at iteration {it}")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        it += 1
        if callback is not None:
            callback(x)
        z = r if M is None else M.matvec(r)
        rz_new = r @ z
        if not np.isfinite(rz_new):
            raise NumericalBreakdownError(f"non-finite residual at iteration {it}")
        p = z + (rz_new / rz) * p
        rz = rz_new
    residual = float(np.linalg.norm(b - A.matvec(x)) / bnorm)
    if not np.isfinite(residual):
        raise NumericalBreakdownError("non-finite final residual")
    return CGResult(x, it, residual, residual <= tol)


def operator_diagonal(op) -> np.ndarray:
    """Diagonal of an operator.

    Uses ``op.diagonal()`` when available, otherwise probes with unit vectors.
    """
    if hasattr(op, "diagonal"):
        return np.asarray(op.diagonal(), dtype=float)
    A = _as_operator(op)
    n = A.shape[0]
    d = np.empty(n)
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0
        d[i] = A.matvec(e)[i]
        e[i] = 0.0
    return d


def diagonal_preconditioner(op) -> LinearOperator:
    """Jacobi preconditioner: entrywise division by the diagonal of ``op``."""
    d = operator_diagonal(op)
    if d.size and (not np.all(np.isfinite(d)) or d.min() <= 0.0):
        raise InvalidOperatorError("diagonal preconditioner needs a strictly positive diagonal")
    inv = 1.0 / d
    return LinearOperator((d.size, d.size), matvec=lambda v: inv * np.ravel(v), dtype=float)


def symmetry_defect(op, n_probes: int = 50, seed: int = 0) -> float:
    """Largest ``|<Ax, y> - <x, Ay>| / (||x|| ||y||)`` over random probes."""
    A = _as_operator(op)
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        defect = abs(A.matvec(x) @ y - x @ A.matvec(y))
        worst = max(worst, defect / (np.linalg.norm(x) * np.linalg.norm(y)))
    return worst


def to_dense(op) -> np.ndarray:
    """Assemble a dense matrix column by column (small operators only)."""
    A = _as_operator(op)
    return np.column_stack([A.matvec(e) for e in np.eye(A.shape[1])]) if A.shape[1] else np.zeros(A.shape)


class KroneckerSum(LinearOperator):
    """Galerkin restriction of ``sum_k Mx_k (x) My_k`` to a tensor dof map.

    The 1D factors are given in the flattened detail bases of the two kinds
    of ``dof_map`` up to its maximal level. Application scatters the
    coefficients into the full 2D detail array, multiplies from both sides and
    gathers the active entries back.
    """

    def __init__(self, terms: Sequence[tuple], dof_map: TensorDofMap):
        nx, ny = dof_map.shape_1d
        checked = []
        for mx, my in terms:
            mx, my = sp.csr_matrix(mx), sp.csr_matrix(my)
            if mx.shape != (nx, nx) or my.shape != (ny, ny):
                raise InvalidRequestError(
                    f"factor shapes {mx.shape}, {my.shape} do not match detail bases ({nx}, {ny})"
                )
            checked.append((mx, my))
        self.terms = tuple(checked)
        self.dof_map = dof_map
        super().__init__(dtype=float, shape=(dof_map.total, dof_map.total))

    def _matvec(self, x):
        x = np.ravel(x)
        if x.shape[0] != self.dof_map.total:
            raise InvalidRequestError(f"expected {self.dof_map.total} coefficients, got {x.shape[0]}")
        X = self.dof_map.scatter(x)
        Y = np.zeros_like(X)
        for mx, my in self.terms:
            Y += (my @ (mx @ X).T).T
        return self.dof_map.gather(Y)

    def _rmatvec(self, x):
        X = self.dof_map.scatter(np.ravel(x))
        Y = np.zeros_like(X)
        for mx, my in self.terms:
            Y += (my.T @ (mx.T @ X).T).T
        return self.dof_map.gather(Y)

    def diagonal(self) -> np.ndarray:
        r, c = self.dof_map.rows, self.dof_map.cols
        d = np.zeros(self.dof_map.total)
        for mx, my in self.terms:
            d += mx.diagonal()[r] * my.diagonal()[c]
        return d


def kronecker_apply(ks: KroneckerSum, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (ks.shape[1],):
        raise InvalidRequestError(f"expected a vector of length {ks.shape[1]}, got shape {x.shape}")
    return ks.matvec(x)
