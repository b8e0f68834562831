"""One-dimensional dyadic finite element spaces and their multilevel splittings.

Three families live on the uniform dyadic meshes of (0, 1):

* ``DIRICHLET_HAT``: continuous piecewise linears vanishing at 0 and 1,
* ``PERIODIC_HAT``: 1-periodic piecewise linears modulo constants, with the
  representative fixed by a zero value at node 0,
* ``PIECEWISE_CONSTANT``: one value per element.

Nodal coefficients are ordered by node (hats, interior nodes ``1..2**level-1``)
or by element (constants). Detail coefficients are ordered level by level,
and by position inside a level. Hat details are hierarchical surpluses and
constant details are unnormalized Haar amplitudes, so that the detail basis
of level ``l`` for constants is ``+1`` on the left half and ``-1`` on the right
half of every level ``l-1`` element.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .errors import InvalidRequestError

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]

GAUSS_POINTS_PER_ELEMENT = 5


class SpaceKind(enum.Enum):
    DIRICHLET_HAT = "dirichlet"
    PERIODIC_HAT = "periodic"
    PIECEWISE_CONSTANT = "constant"

    @property
    def is_hat(self) -> bool:
        return self is not SpaceKind.PIECEWISE_CONSTANT


DIRICHLET_HAT = SpaceKind.DIRICHLET_HAT
PERIODIC_HAT = SpaceKind.PERIODIC_HAT
PIECEWISE_CONSTANT = SpaceKind.PIECEWISE_CONSTANT


def _check_level(level) -> int:
    if int(level) != level or level < 0:
        raise InvalidRequestError(f"level must be a nonnegative integer, got {level!r}")
    return int(level)


@dataclass(frozen=True)
class DyadicMesh:
    """Uniform mesh of (0, 1) with ``2**level`` elements."""

    level: int

    def __post_init__(self):
        _check_level(self.level)

    @property
    def n_elements(self) -> int:
        return 2**self.level

    @property
    def h(self) -> float:
        return 2.0**-self.level

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_elements + 1) * self.h

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_elements) + 0.5) * self.h


def space_dimension(kind: SpaceKind, level: int) -> int:
    """Dimension of the level-``level`` space of the given family."""
    level = _check_level(level)
    if kind is PIECEWISE_CONSTANT:
        return 2**level
    return 2**level - 1


def detail_dimension(kind: SpaceKind, level: int) -> int:
    """Dimension of the complement of level ``level-1`` inside level ``level``."""
    level = _check_level(level)
    if level == 0:
        return space_dimension(kind, 0)
    return space_dimension(kind, level) - space_dimension(kind, level - 1)


def detail_levels(kind: SpaceKind, level: int) -> np.ndarray:
    """Level of each detail coefficient in the flattened ordering."""
    return np.repeat(np.arange(level + 1), [detail_dimension(kind, l) for l in range(level + 1)])


@lru_cache(maxsize=None)
def _gauss_reference(n: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


def gauss_rule(level: int, n: int = GAUSS_POINTS_PER_ELEMENT) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule with ``n`` points on each level element.

    Returns
    -------
    points, weights : ndarray
        Element-major ordered quadrature nodes in (0, 1) and their weights.
    """
    mesh = DyadicMesh(level)
    t, w = _gauss_reference(n)
    left = mesh.nodes[:-1, None]
    points = (left + mesh.h * t[None, :]).ravel()
    weights = np.broadcast_to(mesh.h * w, (mesh.n_elements, n)).ravel()
    return points, weights.copy()


def evaluate_coefficient(coeff: Coefficient, x: np.ndarray) -> np.ndarray:
    """Evaluate a scalar or vectorized callable coefficient at ``x``."""
    x = np.asarray(x, dtype=float)
    if callable(coeff):
        values = np.asarray(coeff(x), dtype=float)
        return np.broadcast_to(values, x.shape).astype(float)
    return np.full(x.shape, float(coeff))


def integrate(fn: Coefficient, level: int = 6, n: int = GAUSS_POINTS_PER_ELEMENT) -> float:
    """Integral of ``fn`` over (0, 1) by composite Gauss quadrature."""
    x, w = gauss_rule(level, n)
    return float(w @ evaluate_coefficient(fn, x))


def _element_index(level: int, x: np.ndarray) -> np.ndarray:
    # right-continuous, with x = 1 assigned to the last element
    return np.clip(np.floor(x * 2**level).astype(np.int64), 0, 2**level - 1)


def interpolation_matrix(kind: SpaceKind, level: int, points, derivative: int = 0) -> sp.csr_matrix:
    """Values (or first derivatives) of the nodal basis at ``points``.

    Entry ``(k, i)`` is ``D**derivative b_i(points[k])``. Derivatives use the
    slope of the element containing the point, taken from the right at
    element boundaries. Periodic hats wrap points into [0, 1).
    """
    level = _check_level(level)
    x = np.atleast_1d(np.asarray(points, dtype=float))
    npts = x.size
    dim = space_dimension(kind, level)
    if derivative not in (0, 1):
        raise InvalidRequestError(f"derivative order must be 0 or 1, got {derivative}")
    if kind is PIECEWISE_CONSTANT:
        if derivative:
            raise InvalidRequestError("piecewise constants have no weak derivative")
        e = _element_index(level, x)
        return sp.csr_matrix((np.ones(npts), (np.arange(npts), e)), shape=(npts, dim))
    if kind is PERIODIC_HAT:
        x = np.mod(x, 1.0)
    n = 2**level
    e = _element_index(level, x)
    t = x * n - e
    if derivative:
        vals = np.stack([np.full(npts, -float(n)), np.full(npts, float(n))], axis=1)
    else:
        vals = np.stack([1.0 - t, t], axis=1)
    node = np.stack([e, e + 1], axis=1)
    if kind is PERIODIC_HAT:
        node = np.mod(node, n)
    # node 0 (and node n for Dirichlet) carries no degree of freedom
    keep = (node >= 1) & (node <= n - 1)
    rows = np.broadcast_to(np.arange(npts)[:, None], node.shape)
    return sp.csr_matrix(
        (vals[keep], (rows[keep], node[keep] - 1)), shape=(npts, dim)
    )


def gram_matrix_1d(
    level: int,
    kind_row: SpaceKind,
    kind_col: SpaceKind,
    coeff: Coefficient = 1.0,
    d_row: int = 0,
    d_col: int = 0,
) -> sp.csr_matrix:
    """Weighted Gram matrix of two nodal bases on the same level.

    Entry ``(i, j)`` approximates ``int_0^1 coeff * D^d_row b_i * D^d_col b_j``
    with 5-point Gauss-Legendre quadrature on every element.
    """
    x, w = gauss_rule(level)
    br = interpolation_matrix(kind_row, level, x, d_row)
    bc = interpolation_matrix(kind_col, level, x, d_col)
    weights = w * evaluate_coefficient(coeff, x)
    return (br.T @ sp.diags(weights) @ bc).tocsr()


def load_vector_1d(level: int, kind: SpaceKind, fn: Coefficient, derivative: int = 0) -> np.ndarray:
    """Vector of ``int_0^1 fn * D^derivative b_i`` over the nodal basis."""
    x, w = gauss_rule(level)
    b = interpolation_matrix(kind, level, x, derivative)
    return b.T @ (w * evaluate_coefficient(fn, x))


@dataclass(frozen=True)
class NodalFunction:
    """A finite element function given by its nodal coefficients."""

    kind: SpaceKind
    level: int
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        expected = space_dimension(self.kind, self.level)
        if coeffs.shape != (expected,):
            raise InvalidRequestError(
                f"{self.kind.value} space at level {self.level} has dimension "
                f"{expected}, got coefficients of shape {coeffs.shape}"
            )
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, kind: SpaceKind, level: int) -> "NodalFunction":
        return cls(kind, level, np.zeros(space_dimension(kind, level)))

    @classmethod
    def interpolate(cls, kind: SpaceKind, level: int, fn: Coefficient) -> "NodalFunction":
        """Nodal interpolant (hats) or cell-midpoint sample (constants)."""
        mesh = DyadicMesh(level)
        if kind is PIECEWISE_CONSTANT:
            x = mesh.midpoints
        else:
            x = mesh.nodes[1:-1]
        return cls(kind, level, evaluate_coefficient(fn, x))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (interpolation_matrix(self.kind, self.level, x.ravel()) @ self.coeffs).reshape(x.shape)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        b = interpolation_matrix(self.kind, self.level, x.ravel(), derivative=1)
        return (b @ self.coeffs).reshape(x.shape)

    def nodal_values(self) -> np.ndarray:
        """Values at all mesh nodes including the two endpoints (hat kinds)."""
        if self.kind is PIECEWISE_CONSTANT:
            raise InvalidRequestError("piecewise constants have no nodal values")
        return np.concatenate([[0.0], self.coeffs, [0.0]])


def prolongation_matrix(kind: SpaceKind, level: int) -> sp.csr_matrix:
    """Coefficients of the level-``level`` basis in the level ``level+1`` basis."""
    fine = DyadicMesh(level + 1)
    if kind is PIECEWISE_CONSTANT:
        x = fine.midpoints
    else:
        x = fine.nodes[1:-1]
    return interpolation_matrix(kind, level, x)


def prolong(f: NodalFunction, level: int) -> NodalFunction:
    """Represent ``f`` exactly on a finer (or the same) level."""
    if level < f.level:
        raise InvalidRequestError(f"cannot prolong from level {f.level} to coarser level {level}")
    c = f.coeffs
    for l in range(f.level, level):
        c = prolongation_matrix(f.kind, l) @ c
    return NodalFunction(f.kind, level, c)


# -- multilevel transforms, acting along axis 0 --------------------------------

def _hat_positions(max_level: int, level: int) -> np.ndarray:
    """Fine-grid node numbers of the nodes new on ``level``."""
    step = 2 ** (max_level - level)
    return np.arange(step, 2**max_level, 2 * step)


def hierarchize(kind: SpaceKind, level: int, values: np.ndarray) -> np.ndarray:
    """Nodal coefficients to flattened detail coefficients (along axis 0)."""
    values = np.asarray(values, dtype=float)
    if kind is PIECEWISE_CONSTANT:
        c = values
        details = []
        for _ in range(level):
            left, right = c[0::2], c[1::2]
            details.append(0.5 * (left - right))
            c = 0.5 * (left + right)
        return np.concatenate([c] + details[::-1], axis=0)
    n = 2**level
    full = np.zeros((n + 1,) + values.shape[1:])
    full[1:-1] = values
    blocks = []
    for l in range(1, level + 1):
        idx = _hat_positions(level, l)
        step = 2 ** (level - l)
        blocks.append(full[idx] - 0.5 * (full[idx - step] + full[idx + step]))
    if not blocks:
        return np.zeros((0,) + values.shape[1:])
    return np.concatenate(blocks, axis=0)


def dehierarchize(kind: SpaceKind, level: int, details: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hierarchize`."""
    details = np.asarray(details, dtype=float)
    sizes = [detail_dimension(kind, l) for l in range(level + 1)]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    if details.shape[0] != offsets[-1]:
        raise InvalidRequestError(
            f"expected {offsets[-1]} detail coefficients, got {details.shape[0]}"
        )
    if kind is PIECEWISE_CONSTANT:
        c = details[0:1]
        for l in range(1, level + 1):
            d = details[offsets[l]:offsets[l + 1]]
            out = np.empty((2 * c.shape[0],) + c.shape[1:])
            out[0::2] = c + d
            out[1::2] = c - d
            c = out
        return c
    n = 2**level
    full = np.zeros((n + 1,) + details.shape[1:])
    for l in range(1, level + 1):
        idx = _hat_positions(level, l)
        step = 2 ** (level - l)
        full[idx] = details[offsets[l]:offsets[l + 1]] + 0.5 * (full[idx - step] + full[idx + step])
    return full[1:-1]


@lru_cache(maxsize=None)
def synthesis_matrix(kind: SpaceKind, level: int) -> sp.csr_matrix:
    """Matrix whose columns are the nodal coefficients of the detail basis.

    A 1D matrix ``M`` in the nodal basis becomes ``S.T @ M @ S`` in the detail
    basis. The cached result must not be modified in place.
    """
    dim = space_dimension(kind, level)
    s = sp.csr_matrix(dehierarchize(kind, level, np.eye(dim)))
    s.eliminate_zeros()
    return s


def detail_basis_matrix(kind: SpaceKind, level: int, points, derivative: int = 0) -> sp.csr_matrix:
    """Values of the flattened detail basis at ``points``."""
    return (interpolation_matrix(kind, level, points, derivative) @ synthesis_matrix(kind, level)).tocsr()


@dataclass(frozen=True)
class MultilevelDecomposition:
    """Per-level detail coefficients of a function up to ``max_level``."""

    kind: SpaceKind
    max_level: int
    blocks: tuple

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=float) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    @classmethod
    def from_flat(cls, kind: SpaceKind, max_level: int, details) -> "MultilevelDecomposition":
        details = np.asarray(details, dtype=float)
        sizes = [detail_dimension(kind, l) for l in range(max_level + 1)]
        if details.shape != (sum(sizes),):
            raise InvalidRequestError(f"expected {sum(sizes)} detail coefficients, got {details.shape}")
        return cls(kind, max_level, tuple(np.split(details, np.cumsum(sizes)[:-1])))


def decompose(f: NodalFunction, max_level: int) -> MultilevelDecomposition:
    """Split ``f`` into detail blocks for levels ``0..max_level``."""
    if f.level > max_level:
        raise InvalidRequestError(
            f"function level {f.level} exceeds decomposition level {max_level}"
        )
    fine = prolong(f, max_level)
    return MultilevelDecomposition.from_flat(
        f.kind, max_level, hierarchize(f.kind, max_level, fine.coeffs)
    )


def reconstruct(dec: MultilevelDecomposition) -> NodalFunction:
    """Sum the detail blocks back into nodal coefficients."""
    sizes = [detail_dimension(dec.kind, l) for l in range(dec.max_level + 1)]
    got = [b.shape for b in dec.blocks]
    if got != [(s,) for s in sizes]:
        raise InvalidRequestError(f"block shapes {got} do not match detail dimensions {sizes}")
    return NodalFunction(dec.kind, dec.max_level, dehierarchize(dec.kind, dec.max_level, dec.flat()))


def detail_offsets(kind: SpaceKind, level: int) -> np.ndarray:
    """Start of each level's block in the flattened detail ordering (length level+2)."""
    sizes = [detail_dimension(kind, l) for l in range(level + 1)]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

