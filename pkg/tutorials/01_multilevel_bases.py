# Multilevel bases on dyadic meshes: hierarchical surpluses, Haar details
# and how sparse tensor spaces are counted.

import numpy as np

from sparsehom.hierarchy import (
    DIRICHLET_HAT, PERIODIC_HAT, PIECEWISE_CONSTANT,
    NodalFunction, decompose, reconstruct, space_dimension,
)
from sparsehom.tensor_index import build_level_pairs, tensor_dimension

# a level-3 hat function sampled from x(1 - x)
f = NodalFunction.interpolate(DIRICHLET_HAT, 3, lambda x: x * (1 - x))
dec = decompose(f, 3)
for level, block in enumerate(dec.blocks):
    print("hat surpluses, level", level, block)  # surpluses shrink by 4 per level

# round trip back to nodal values
print("round trip error:", np.abs(reconstruct(dec).coeffs - f.coeffs).max())

# piecewise constants split into a mean plus Haar amplitudes
g = NodalFunction(PIECEWISE_CONSTANT, 2, np.array([4.0, 2.0, 1.0, 1.0]))
print("Haar blocks:", decompose(g, 2).blocks)

# dimensions of the 1D families
for kind in (DIRICHLET_HAT, PERIODIC_HAT, PIECEWISE_CONSTANT):
    print(kind.value, [space_dimension(kind, L) for L in range(5)])

# sparse level pairs keep l + l' <= L, full pairs keep max(l, l') <= L
print(build_level_pairs(2, "sparse").pairs)
kinds = (PIECEWISE_CONSTANT, PERIODIC_HAT)
for L in range(1, 9):
    ds, df = tensor_dimension(kinds, L, "sparse"), tensor_dimension(kinds, L, "full")
    print(f"L={L}  sparse={ds:5d}  full={df:6d}  sparse/(L 2^L)={ds / (L * 2**L):.3f}")
