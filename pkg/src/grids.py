"""Contains the `GridFunction` and `OscillatingProfile` classes and discrete generators

The generator tr(b D²·) is discretized along the slice-lattice basis vectors, so on
the full N^d torus grid the matrix never couples nodes of different slice classes
<k, i> mod N. Each class is a discrete copy of the slice grid with M = N.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from src.coeffs import ProjectedOperator
from src.lattice import Direction, SliceChart, slice_lattice_basis
from src.utils.stencil import second_order_operator


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values on a uniform periodic grid over T^d (chart is None) or over a slice"""

    values: np.ndarray
    h: Tuple[float, ...]
    chart: Optional[SliceChart] = field(default=None, repr=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")

    @property
    def domain(self) -> str:
        return "torus" if self.chart is None else "slice"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True, eq=False)
class OscillatingProfile:
    """Scalars or d×d tensors sampled at offsets s in [0, r_e), e rational"""

    direction: Direction
    s_grid: np.ndarray
    values: np.ndarray
    error: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == 3 and not np.allclose(
            values, np.swapaxes(values, 1, 2), atol=1e-12
        ):
            raise ValueError("tensor profile values must be symmetric")

    @property
    def is_tensor(self) -> bool:
        return np.asarray(self.values).ndim == 3

    def quadrature_weights(self) -> np.ndarray:
        """Periodic trapezoid weights on [0, r_e), summing to one"""
        s = np.asarray(self.s_grid, dtype=float)
        period = self.direction.period
        if s.size == 0 or np.any(s < 0) or np.any(s >= period):
            raise ValueError(f"offsets must lie in [0, {period})")
        order = np.argsort(s)
        ordered = s[order]
        if np.any(np.diff(ordered) <= 0):
            raise ValueError("offsets must be distinct")
        if s.size == 1:
            return np.ones(1)
        after = np.roll(ordered, -1)
        after[-1] += period
        before = np.roll(ordered, 1)
        before[0] -= period
        weights = np.empty_like(s)
        weights[order] = (after - before) / (2.0 * period)
        return weights

    def average(self):
        """r_e⁻¹ ∫ profile ds by the periodic trapezoid rule"""
        return np.tensordot(self.quadrature_weights(), self.values, axes=(0, 0))


def uniform_offsets(e: Direction, count: int) -> np.ndarray:
    """Offsets c·r_e/count, c = 0..count-1"""
    return np.arange(count) * e.period / count


def torus_nodes(d: int, N: int) -> np.ndarray:
    """Integer indices of the N^d grid nodes, shape (N^d, d), C order"""
    return np.indices((N,) * d).reshape(d, -1).T


def torus_generator(op: ProjectedOperator, N: int):
    """Return (L, points, classes) for tr(b D²·) on the N^d torus grid"""
    e = op.direction
    chart = slice_lattice_basis(e)
    index = torus_nodes(op.d, N)
    points = index / N
    C = op.chart_coefficients(points, chart.basis)
    L = second_order_operator(C, (N,) * op.d, chart.basis.T, 1.0 / N)
    classes = (index @ np.asarray(e.k)) % N
    return L, points, classes


def slice_generator(op: ProjectedOperator, chart: SliceChart, M: int):
    """Return (L, points) for tr(b D²·) pulled back to the M^(d-1) slice grid"""
    k = op.d - 1
    points = chart.points(M)
    C = op.chart_coefficients(points, chart.basis)
    L = second_order_operator(C, (M,) * k, np.eye(k, dtype=int), 1.0 / M)
    return L, points


def replace_rows_with_identity(matrix: sp.spmatrix, rows: np.ndarray) -> sp.csr_matrix:
    """Return a copy of `matrix` whose rows flagged in the mask are identity rows"""
    keep = sp.diags((~rows).astype(float))
    pin = sp.diags(rows.astype(float))
    return (keep @ matrix + pin).tocsr()
