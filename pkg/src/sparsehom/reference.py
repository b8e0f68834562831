"""Single-scale reference solvers, 1D homogenization formulas and error norms.

These are the oracles for the two-scale solver: a resolved finite element
solution of the oscillating problem, the harmonic-mean homogenized
coefficient with its closed-form cell corrector, and the homogenized solve.
Linear systems here are tridiagonal and solved directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as sla

from .errors import InvalidCoefficientError, InvalidRequestError
from .hierarchy import (
    DIRICHLET_HAT,
    Coefficient,
    NodalFunction,
    evaluate_coefficient,
    gauss_rule,
    gram_matrix_1d,
    load_vector_1d,
)
from .twoscale import EpsilonProblem, SeparableCoefficient, check_epsilon

CELL_PANELS = 64
ELEMENTS_PER_PERIOD = 8


def fe_solve(coeff: Coefficient, f: Coefficient, level: int) -> NodalFunction:
    """Piecewise linear Galerkin solution of ``-(coeff u')' = f``, ``u(0) = u(1) = 0``."""
    if level < 1:
        raise InvalidRequestError(f"level must be at least 1, got {level}")
    K = gram_matrix_1d(level, DIRICHLET_HAT, DIRICHLET_HAT, coeff, 1, 1).tocsc()
    b = load_vector_1d(level, DIRICHLET_HAT, f)
    return NodalFunction(DIRICHLET_HAT, level, np.atleast_1d(sla.spsolve(K, b)))


def solve_fine(prob: EpsilonProblem, level: int) -> NodalFunction:
    """Resolved solution of the oscillating problem.

    Requires at least eight elements per period, ``2**-level <= eps / 8``.
    """
    need = check_epsilon(prob.epsilon) + int(math.log2(ELEMENTS_PER_PERIOD))
    if level < need:
        raise InvalidRequestError(
            f"level {level} under-resolves epsilon = {prob.epsilon}; need level >= {need}"
        )
    a_eps = prob.coefficient.oscillating(prob.epsilon)
    x, _ = gauss_rule(level)
    if np.min(a_eps(x)) <= 0.0:
        raise InvalidCoefficientError("oscillating coefficient is not positive")
    return fe_solve(a_eps, prob.source, level)


def _cell_rule():
    # 64 panels = 2**6 dyadic elements
    return gauss_rule(int(math.log2(CELL_PANELS)))


def homogenized_coefficient(coeff: SeparableCoefficient, x) -> np.ndarray:
    """Harmonic mean ``(int_Y A(x, y)^-1 dy)^-1`` on 64 Gauss panels."""
    x = np.asarray(x, dtype=float)
    y, wy = _cell_rule()
    values = coeff.grid(x.ravel(), y)
    if np.any(values <= 0.0):
        raise InvalidCoefficientError("coefficient must be positive to homogenize")
    return (1.0 / ((1.0 / values) @ wy)).reshape(x.shape)


def cell_corrector(coeff: SeparableCoefficient, x: float, y_points) -> np.ndarray:
    """Corrector ``chi(x, y) = int_0^y (A0(x) / A(x, t) - 1) dt``.

    The representative has ``chi(x, 0) = 0``; periodicity gives
    ``chi(x, 1) = 0`` as well.
    """
    y_points = np.asarray(y_points, dtype=float)
    a0 = float(homogenized_coefficient(coeff, np.array([x]))[0])
    t, wt = _cell_rule()
    out = np.empty(y_points.shape)
    for idx, y in np.ndenumerate(y_points):
        vals = coeff(np.full(t.shape, x), t * y)
        if np.any(vals <= 0.0):
            raise InvalidCoefficientError("coefficient must be positive")
        out[idx] = y * ((a0 / vals - 1.0) @ wt)
    return out


def corrector_gradient(coeff: SeparableCoefficient, x, y) -> np.ndarray:
    """``d chi / dy = A0(x) / A(x, y) - 1`` on the tensor grid ``x x y``."""
    x = np.asarray(x, dtype=float)
    a0 = homogenized_coefficient(coeff, x)
    return a0[:, None] / coeff.grid(x, np.asarray(y, dtype=float)) - 1.0


def solve_homogenized(coeff: SeparableCoefficient, f: Coefficient, level: int) -> NodalFunction:
    """Finite element solution of ``-(A0 u')' = f`` with zero boundary values."""
    return fe_solve(lambda x: homogenized_coefficient(coeff, x), f, level)


@dataclass(frozen=True)
class ErrorReport:
    l2: float
    h1semi: float
    point_errors: Optional[tuple] = None

    @property
    def h1(self) -> float:
        return math.hypot(self.l2, self.h1semi)


def _grad(fn, explicit):
    if explicit is not None:
        return explicit
    grad = getattr(fn, "derivative", None)
    if grad is None:
        raise InvalidRequestError("a derivative is needed for the H1 seminorm")
    return grad


def error_norms(
    approx: Callable,
    exact: Callable,
    quad_level: int,
    approx_grad: Optional[Callable] = None,
    exact_grad: Optional[Callable] = None,
    points=None,
) -> ErrorReport:
    """L2 and H1-seminorm errors on (0, 1) by composite 5-point Gauss.

    Derivatives come from the ``derivative`` attribute of the callables unless
    passed explicitly. ``quad_level`` should exceed the mesh level of either
    argument by at least two so that quadrature cells resolve the kinks.
    """
    x, w = gauss_rule(quad_level)
    e = evaluate_coefficient(approx, x) - evaluate_coefficient(exact, x)
    de = evaluate_coefficient(_grad(approx, approx_grad), x) - evaluate_coefficient(
        _grad(exact, exact_grad), x
    )
    pts = None
    if points is not None:
        p = np.asarray(points, dtype=float)
        diff = np.abs(evaluate_coefficient(approx, p) - evaluate_coefficient(exact, p))
        pts = tuple(zip(p.tolist(), diff.tolist()))
    return ErrorReport(float(np.sqrt(w @ e**2)), float(np.sqrt(w @ de**2)), pts)


def corrector_error(phi_grid: Callable, exact: Callable, exact_dy: Callable, quad_level: int) -> ErrorReport:
    """Error of a corrector in ``L2(D, H1(Y)/R)``.

    ``phi_grid(x, y, dy)`` evaluates the approximation on a tensor grid,
    ``exact`` and ``exact_dy`` evaluate the exact corrector and its
    ``y``-derivative on tensor grids. Both differences are compared modulo
    functions of ``x`` alone: ``l2`` is taken after removing the ``y``-mean.
    """
    x, w = gauss_rule(quad_level)
    d = exact(x, x) - phi_grid(x, x, False)
    d = d - (d @ w)[:, None]
    dd = exact_dy(x, x) - phi_grid(x, x, True)
    return ErrorReport(float(np.sqrt(w @ d**2 @ w)), float(np.sqrt(w @ dd**2 @ w)))
