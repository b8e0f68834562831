"""Level-pair index sets and degree-of-freedom maps for tensor detail bases."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .hierarchy import SpaceKind, detail_dimension, detail_offsets, space_dimension


class Mode(enum.Enum):
    FULL = "full"
    SPARSE = "sparse"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class LevelPairSet:
    max_level: int
    mode: Mode
    pairs: tuple

    def __len__(self):
        return len(self.pairs)

    def __contains__(self, pair):
        return tuple(pair) in set(self.pairs)


def build_level_pairs(max_level: int, mode) -> LevelPairSet:
    """Enumerate ``(l, l')`` with ``max(l, l') <= L`` (full) or ``l + l' <= L`` (sparse).

    Pairs are returned in lexicographic order.
    """
    mode = Mode.parse(mode)
    L = int(max_level)
    if L < 0:
        raise ValueError(f"max_level must be nonnegative, got {max_level}")
    if mode is Mode.FULL:
        pairs = [(l, m) for l in range(L + 1) for m in range(L + 1)]
    else:
        pairs = [(l, m) for l in range(L + 1) for m in range(L + 1 - l)]
    return LevelPairSet(L, mode, tuple(pairs))


@dataclass(frozen=True)
class TensorDofMap:
    """Contiguous numbering of the tensor detail functions of a level-pair set.

    Block ``(l, l')`` holds the products of level-``l`` details of ``kinds[0]``
    with level-``l'`` details of ``kinds[1]``, row-major in the two positions.
    ``rows``/``cols`` give, per degree of freedom, the position of its two
    factors in the flattened 1D detail orderings up to ``max_level``.
    """

    kinds: tuple
    level_pairs: LevelPairSet
    offsets: dict
    total: int
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)

    @property
    def max_level(self) -> int:
        return self.level_pairs.max_level

    @property
    def mode(self) -> Mode:
        return self.level_pairs.mode

    @property
    def shape_1d(self) -> tuple[int, int]:
        """Sizes of the two 1D detail bases the map indexes into."""
        L = self.max_level
        return space_dimension(self.kinds[0], L), space_dimension(self.kinds[1], L)

    def block_shape(self, pair) -> tuple[int, int]:
        return detail_dimension(self.kinds[0], pair[0]), detail_dimension(self.kinds[1], pair[1])

    def block(self, x: np.ndarray, pair) -> np.ndarray:
        """View of the coefficients of block ``pair`` as a 2D array."""
        start = self.offsets[tuple(pair)]
        n, m = self.block_shape(pair)
        return x[start:start + n * m].reshape(n, m)

    def scatter(self, x: np.ndarray) -> np.ndarray:
        """Embed coefficients into the full 2D detail array (zeros elsewhere)."""
        out = np.zeros(self.shape_1d)
        out[self.rows, self.cols] = x
        return out

    def gather(self, full: np.ndarray) -> np.ndarray:
        return full[self.rows, self.cols]

    def transpose_permutation(self) -> np.ndarray:
        """Index map of the swap ``(l, i) x (l', j) -> (l', j) x (l, i)``.

        Only defined when both factors share a kind; ``x[perm]`` is the
        coefficient vector of the transposed function.
        """
        if self.kinds[0] is not self.kinds[1]:
            raise ValueError("transpose requires identical kinds")
        lookup = np.full(self.shape_1d, -1, dtype=np.int64)
        lookup[self.rows, self.cols] = np.arange(self.total)
        perm = lookup[self.cols, self.rows]
        if np.any(perm < 0):
            raise ValueError("level-pair set is not symmetric")
        return perm


def build_dof_map(kinds, pairs: LevelPairSet) -> TensorDofMap:
    kx, ky = kinds
    ox = detail_offsets(kx, pairs.max_level)
    oy = detail_offsets(ky, pairs.max_level)
    offsets = {}
    rows, cols = [], []
    total = 0
    for l, m in pairs.pairs:
        offsets[(l, m)] = total
        n1, n2 = detail_dimension(kx, l), detail_dimension(ky, m)
        r, c = np.meshgrid(np.arange(n1) + ox[l], np.arange(n2) + oy[m], indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        total += n1 * n2
    rows = np.concatenate(rows).astype(np.int64)
    cols = np.concatenate(cols).astype(np.int64)
    return TensorDofMap((kx, ky), pairs, offsets, total, rows, cols)


def first_nonempty_level(kind: SpaceKind) -> int:
    return 0 if detail_dimension(kind, 0) else 1


def sparse_shift(kinds) -> int:
    """Index shift that makes the level-1 sparse space the coarsest nonempty block.

    Zero for (constants, periodic hats); one for two Dirichlet factors, whose
    level-0 spaces are both empty. With this shift the level-``L`` sparse space
    always contains the level-``L`` mesh functions of each factor.
    """
    return max(0, sum(first_nonempty_level(k) for k in kinds) - 1)


def build_space_map(kinds, level: int, mode) -> TensorDofMap:
    """Dof map of the level-``level`` full or sparse tensor space of ``kinds``."""
    mode = Mode.parse(mode)
    if mode is Mode.SPARSE:
        pairs = build_level_pairs(level + sparse_shift(kinds), mode)
        pairs = LevelPairSet(level, mode, tuple(p for p in pairs.pairs if max(p) <= level))
    else:
        pairs = build_level_pairs(level, mode)
    return build_dof_map(kinds, pairs)


def tensor_dimension(kinds, max_level: int, mode) -> int:
    return build_space_map(kinds, max_level, mode).total


def verify_dof_bound(kinds, max_level: int) -> list[tuple[int, int, int, float]]:
    """Sparse and full tensor dimensions for ``L = 2..max_level``.

    Each row is ``(L, dim_sparse, dim_full, dim_sparse / (L * 2**L))``.
    """
    if max_level < 2:
        raise ValueError("max_level must be at least 2")
    table = []
    for L in range(2, max_level + 1):
        ds = tensor_dimension(kinds, L, Mode.SPARSE)
        df = tensor_dimension(kinds, L, Mode.FULL)
        table.append((L, ds, df, ds / (L * 2**L)))
    return table


__all__ = [
    "Mode",
    "LevelPairSet",
    "TensorDofMap",
    "build_level_pairs",
    "build_dof_map",
    "tensor_dimension",
    "build_space_map",
    "sparse_shift",
    "verify_dof_bound",
    "SpaceKind",
]
