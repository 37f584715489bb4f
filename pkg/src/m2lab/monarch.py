"""Order-2 square Monarch matrices.

A Monarch matrix on ``n = b * b`` entries is ``P^T L P R`` where ``R`` and
``L`` are block-diagonal with ``b`` blocks of size ``b x b`` and ``P`` is the
perfect shuffle sending index ``a*b + c`` to ``c*b + a``. Viewing a length-n
vector as a ``b x b`` grid, ``R`` acts on rows, ``P`` transposes the grid, and
``L`` acts on rows of the transposed grid, so an apply costs ``2 b^3``
multiplications instead of ``b^4``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from . import numeric as nm
from .errors import ConfigurationError, DimensionError
from .numeric import DiffArray


@dataclass
class MonarchMatrix:
    left: DiffArray   # (b, b, b)
    right: DiffArray  # (b, b, b)

    @property
    def b(self):
        return self.left.shape[0]

    @property
    def n(self):
        return self.b * self.b

    def parameters(self):
        return [self.left, self.right]


def monarch_from_blocks(left, right, trainable=True):
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    b = left.shape[0]
    if left.shape != (b, b, b) or right.shape != (b, b, b):
        raise ConfigurationError(f"blocks must be ({b}, {b}, {b})")
    return MonarchMatrix(DiffArray(left, trainable=trainable), DiffArray(right, trainable=trainable))


def monarch_init(b, scale=None, rng=None):
    """Blocks drawn i.i.d. uniform on ``[-scale, scale]``; ``scale`` defaults to ``1/sqrt(n)``."""
    if not nm.is_power_of_two(b):
        raise ConfigurationError(f"block count must be a power of two, got {b}")
    if scale is None:
        scale = 1.0 / b
    if scale < 0:
        raise ConfigurationError("scale must be non-negative")
    rng = np.random.default_rng(rng)
    left = rng.uniform(-scale, scale, size=(b, b, b))
    right = rng.uniform(-scale, scale, size=(b, b, b))
    return monarch_from_blocks(left, right)


def monarch_apply(M, x):
    """``dense(M) @ x`` for a vector (n,) or row-wise for a stack (L, n)."""
    x = nm.as_diff(x)
    b, n = M.b, M.n
    if x.shape[-1] != n:
        raise DimensionError(f"expected trailing size {n}, got {x.shape[-1]}")
    lead = x.shape[:-1]
    grid = nm.reshape(x, (*lead, b, b))
    grid = nm.block_matmul(M.right, grid)
    grid = nm.swapaxes(grid, -1, -2)
    grid = nm.block_matmul(M.left, grid)
    grid = nm.swapaxes(grid, -1, -2)
    return nm.reshape(grid, (*lead, n))


def shuffle_permutation(b):
    """Permutation matrix P with ``P e_{a*b+c} = e_{c*b+a}``."""
    n = b * b
    P = np.zeros((n, n))
    for a in range(b):
        for c in range(b):
            P[c * b + a, a * b + c] = 1.0
    return P


def monarch_dense(M):
    """Explicit ``P^T BD(left) P BD(right)`` as an (n, n) array."""
    P = shuffle_permutation(M.b)
    L = block_diag(*M.left.values)
    R = block_diag(*M.right.values)
    return DiffArray(P.T @ L @ P @ R)
