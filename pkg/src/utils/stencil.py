"""Finite difference stencils on uniform grids

Second-order central differences for operators of the form sum C_ij d_i d_j where
each d_i is a difference along an integer offset of the grid. Offsets need not be
coordinate axes: on the full torus they are the slice-lattice basis vectors, which
keeps every stencil inside one slice class.
"""

from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp


def shift_indices(shape, offset, periodic=True) -> Tuple[np.ndarray, np.ndarray]:
    """Return flat indices of `p + offset` for every node p, and a validity mask

    On a periodic grid every shifted node exists. Otherwise nodes shifted outside
    the grid are reported invalid (homogeneous Dirichlet data lives there).
    """
    shape = tuple(int(n) for n in shape)
    sizes = np.asarray(shape)[:, None]
    target = np.indices(shape).reshape(len(shape), -1) + np.asarray(offset)[:, None]
    if periodic:
        target %= sizes
        valid = np.ones(target.shape[1], dtype=bool)
    else:
        valid = np.all((target >= 0) & (target < sizes), axis=0)
        target = np.where(valid, target, 0)
    return np.ravel_multi_index(tuple(target), shape), valid


def second_order_operator(
    C: np.ndarray,
    shape: Sequence[int],
    directions: Sequence[Sequence[int]],
    h: float,
    periodic: bool = True,
) -> sp.csr_matrix:
    """Assemble the sparse matrix of sum_ij C_ij d_i d_j

    Args:
        C: coefficients per node, shape (n, k, k), symmetric in the last two axes
        shape: grid shape with prod(shape) == n
        directions: k integer offsets, each of length len(shape)
        h: grid step along every direction
        periodic: wrap around (torus) or drop out-of-grid neighbours (Dirichlet)
    """
    n = int(np.prod(shape))
    C = np.asarray(C, dtype=float).reshape(n, len(directions), len(directions))
    directions = [np.asarray(b, dtype=int) for b in directions]
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    data: List[np.ndarray] = []
    node = np.arange(n)

    def add(offset, weights):
        target, valid = shift_indices(shape, offset, periodic)
        rows.append(node[valid])
        cols.append(target[valid])
        data.append(weights[valid])

    centre = np.zeros(n)
    for i, b in enumerate(directions):
        c = C[:, i, i] / h**2
        add(b, c)
        add(-b, c)
        centre -= 2.0 * c
        for j in range(i + 1, len(directions)):
            # 2 C_ij d_i d_j with the four-point cross stencil
            c = C[:, i, j] / (2.0 * h**2)
            q = directions[j]
            add(b + q, c)
            add(-b - q, c)
            add(b - q, -c)
            add(-b + q, -c)
    rows.append(node)
    cols.append(node)
    data.append(centre)

    matrix = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return matrix.tocsr()


def is_symmetric(matrix: sp.spmatrix, tol=1e-12) -> bool:
    """Check symmetry of a sparse matrix relative to its largest entry"""
    scale = abs(matrix).max()
    if scale == 0:
        return True
    return abs(matrix - matrix.T).max() <= tol * scale


def periodic_gradient(values: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of a periodic array, stacked on the last axis"""
    return np.stack(
        [
            (np.roll(values, -1, axis=i) - np.roll(values, 1, axis=i)) / (2.0 * h)
            for i in range(values.ndim)
        ],
        axis=-1,
    )


def periodic_hessian(values: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Hessian of a periodic array, shape values.shape + (d, d)"""
    d = values.ndim
    hess = np.empty(values.shape + (d, d))
    for i in range(d):
        hess[..., i, i] = (
            np.roll(values, -1, axis=i) - 2.0 * values + np.roll(values, 1, axis=i)
        ) / h**2
        for j in range(i + 1, d):
            pp = np.roll(np.roll(values, -1, axis=i), -1, axis=j)
            mm = np.roll(np.roll(values, 1, axis=i), 1, axis=j)
            pm = np.roll(np.roll(values, -1, axis=i), 1, axis=j)
            mp = np.roll(np.roll(values, 1, axis=i), -1, axis=j)
            hess[..., i, j] = hess[..., j, i] = (pp + mm - pm - mp) / (4.0 * h**2)
    return hess


def _shift_matrix(shape, offset) -> sp.csr_matrix:
    index, _ = shift_indices(shape, offset)
    n = index.size
    return sp.csr_matrix((np.ones(n), (np.arange(n), index)), shape=(n, n))


def periodic_difference_stack(
    shape: Sequence[int], h: float
) -> Tuple[sp.csr_matrix, List[Tuple[int, int]]]:
    """Stacked difference operators of a flattened periodic array

    Row blocks are the backward differences along each axis, then the forward
    differences, then the central Hessian entries (i, j) listed in the returned
    pairs. Blocks agree with `periodic_gradient` and `periodic_hessian`.
    """
    d = len(shape)
    identity = sp.identity(int(np.prod(shape)), format="csr")
    unit = np.eye(d, dtype=int)
    forward = [_shift_matrix(shape, unit[i]) for i in range(d)]
    backward = [_shift_matrix(shape, -unit[i]) for i in range(d)]

    blocks = [(identity - backward[i]) / h for i in range(d)]
    blocks += [(forward[i] - identity) / h for i in range(d)]
    pairs = []
    for i in range(d):
        for j in range(i, d):
            if i == j:
                block = (forward[i] - 2.0 * identity + backward[i]) / h**2
            else:
                central_i = forward[i] - backward[i]
                block = (central_i @ (forward[j] - backward[j])) / (4.0 * h**2)
            blocks.append(block)
            pairs.append((i, j))
    return sp.vstack(blocks, format="csr"), pairs
