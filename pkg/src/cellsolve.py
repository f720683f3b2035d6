"""Contains the cell-problem solvers and the `Corrector` class

Three discrete cell problems live here:
  - the penalized problem δ m V − tr(b D²V) = tr(b X) on the full N^d torus grid,
    whose slice averages of δV converge to the oscillating ergodic profile;
  - the uniformly elliptic slice problems −tr(b D²Ṽ) = f − f^⊥(s), one per slice;
  - the Fourier-series corrector for Diophantine directions and constant a.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.coeffs import CoefficientField, ProjectedOperator
from src.grids import (
    GridFunction,
    OscillatingProfile,
    replace_rows_with_identity,
    torus_generator,
    torus_nodes,
)
from src.lattice import Direction, SliceChart, dual_vector, slice_lattice_basis
from src.measures import invariant_measure_slice
from src.utils.errors import (
    CompatibilityViolation,
    IllConditioned,
    NonConvergent,
    SmallDivisor,
    SolverDiverged,
)
from src.utils.stencil import is_symmetric

KRYLOV_RTOL = 1e-10
SLICE_RESIDUAL = 1e-9
COMPATIBILITY_TOL = 1e-8
DIVISOR_FLOOR = 1e-12
DEFAULT_DELTAS = (0.2, 0.1, 0.05)


@dataclass(frozen=True, eq=False)
class Corrector:
    """A discrete corrector with the residual of the equation it solves"""

    V: GridFunction
    delta: float
    residual_inf: float
    mean: float
    tolerance: float = KRYLOV_RTOL


def solve_sparse(
    A: sp.spmatrix,
    rhs: np.ndarray,
    symmetric: bool = False,
    rtol: float = KRYLOV_RTOL,
    maxiter: Optional[int] = None,
    fallback: bool = True,
    direct: bool = False,
) -> Tuple[np.ndarray, float]:
    """Solve A x = rhs, returning x and the relative residual ‖Ax − rhs‖_∞ / ‖rhs‖_∞

    Krylov path: Jacobi-preconditioned conjugate gradients for symmetric systems,
    BiCGSTAB otherwise. If the iteration fails it falls back to a sparse direct
    solve (or raises `SolverDiverged` when `fallback` is off).
    """
    A = sp.csr_matrix(A)
    scale = max(float(np.abs(rhs).max()), 1e-300)
    if not np.any(rhs):
        return np.zeros_like(rhs, dtype=float), 0.0

    def relative_residual(x):
        return float(np.abs(A @ x - rhs).max()) / scale

    if not direct:
        diagonal = A.diagonal()
        diagonal[diagonal == 0] = 1.0
        preconditioner = sp.diags(1.0 / diagonal)
        method = spla.cg if symmetric else spla.bicgstab
        x, info = method(A, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, M=preconditioner)
        residual = relative_residual(x)
        if info == 0 and residual <= 10.0 * rtol:
            logging.debug("%s converged, residual %s", method.__name__, residual)
            return x, residual
        if not fallback:
            raise SolverDiverged(
                f"{method.__name__} stopped with info={info}, residual {residual:.3g}"
            )
        logging.warning(
            "%s stopped with info=%s (residual %s); falling back to a direct solve",
            method.__name__,
            info,
            residual,
        )

    x = spla.spsolve(A.tocsc(), rhs)
    residual = relative_residual(x)
    if not np.all(np.isfinite(x)) or residual > 10.0 * rtol:
        raise IllConditioned(f"direct solve residual {residual:.3g} exceeds {rtol:g}")
    return x, residual


def solve_penalized(
    op: ProjectedOperator,
    X,
    delta: float,
    N: int,
    rtol: float = KRYLOV_RTOL,
    fallback: bool = True,
) -> Corrector:
    """Solve δ m V − tr(b D²V) = tr(b X) on the periodic N^d grid"""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if N < 16:
        raise ValueError("grid N must be at least 16")
    X = np.asarray(X, dtype=float)
    L, points, _ = torus_generator(op, N)
    m = op.m(points)
    rhs = op.drive(points, X)
    A = sp.diags(delta * m) - L
    symmetric = bool(np.ptp(m) == 0 and is_symmetric(L))

    V, residual = solve_sparse(
        A, rhs, symmetric=symmetric, rtol=rtol, fallback=fallback
    )

    bound = float(np.abs(rhs / m).max())
    if delta * np.abs(V).max() > bound * (1.0 + 1e-6) + 1e-12:
        logging.warning(
            "delta*|V| = %s exceeds the comparison bound %s",
            delta * np.abs(V).max(),
            bound,
        )
    logging.info("Penalized corrector delta=%s N=%s: residual %s", delta, N, residual)
    return Corrector(
        V=GridFunction(V.reshape((N,) * op.d), (1.0 / N,) * op.d),
        delta=delta,
        residual_inf=residual * max(float(np.abs(rhs).max()), 1e-300),
        mean=float(V.mean()),
        tolerance=rtol,
    )


def _extrapolate(deltas: np.ndarray, profiles: np.ndarray) -> np.ndarray:
    """Lagrange extrapolation of profiles sampled at `deltas` to δ = 0"""
    result = np.zeros_like(profiles[0])
    for i, di in enumerate(deltas):
        weight = 1.0
        for j, dj in enumerate(deltas):
            if j != i:
                weight *= dj / (dj - di)
        result = result + weight * profiles[i]
    return result


def extract_Fperp(
    op: ProjectedOperator,
    X,
    delta_schedule: Sequence[float] = DEFAULT_DELTAS,
    N: int = 64,
    order: int = 1,
    tol: float = 1e-3,
    correctors: Optional[Sequence[Corrector]] = None,
) -> OscillatingProfile:
    """Return the limit of the slice averages of δV^δ as δ → 0, sampled at s = c·r_e/N

    The limit is m^⊥(s)⁻¹ tr(a^⊥(s) X̃) (positive for X = e⊥⊗e⊥); `error` is the
    change of the extrapolated profile between the last two δ windows.
    `correctors` may carry precomputed solves for the schedule (e.g. from a pool).
    """
    e = op.direction
    if not e.is_rational:
        raise ValueError(
            "extract_Fperp needs a rational direction; use an approach sequence"
        )
    deltas = np.asarray(delta_schedule, dtype=float)
    if order < 0 or len(deltas) < order + 1:
        raise ValueError(f"{len(deltas)} deltas cannot support order {order}")

    _, _, classes = torus_generator(op, N)
    counts = np.bincount(classes, minlength=N)
    if correctors is None:
        correctors = [solve_penalized(op, X, delta, N) for delta in deltas]
    profiles = np.array(
        [
            np.bincount(classes, weights=c.delta * c.V.values.ravel(), minlength=N)
            / counts
            for c in correctors
        ]
    )

    window = order + 1
    limit = _extrapolate(deltas[-window:], profiles[-window:])
    if len(deltas) > window:
        previous = _extrapolate(deltas[-window - 1 : -1], profiles[-window - 1 : -1])
    else:
        previous = profiles[-1]
    spread = float(np.abs(limit - previous).max())
    logging.info(
        "F_perp for %s: spread %s over deltas %s", e.entry(), spread, deltas.tolist()
    )
    if spread > tol:
        raise NonConvergent(f"extrapolation spread {spread:.3g} exceeds {tol:g}")
    return OscillatingProfile(e, np.arange(N) * e.period / N, limit, error=spread)


def solve_slice_cell(
    op: ProjectedOperator,
    chart: SliceChart,
    f: Callable[[np.ndarray], np.ndarray],
    M: int,
) -> Tuple[GridFunction, float]:
    """Solve −tr(b D²Ṽ) = f − f^⊥(s) on one slice, gauge Ṽ(0) = 0"""
    measure = invariant_measure_slice(op, chart, M)
    points = measure.chart.points(M)
    L = measure.generator
    values = np.asarray(f(points), dtype=float)
    f_perp = float(measure.integrate(values))
    rhs = values - f_perp

    defect = abs(float(measure.integrate(rhs)))
    if defect > COMPATIBILITY_TOL * max(1.0, float(np.abs(values).max())):
        raise CompatibilityViolation(f"slice right-hand side has mean {defect:.3g}")

    pin = np.zeros(L.shape[0], dtype=bool)
    pin[0] = True
    A = replace_rows_with_identity(-L, pin)
    pinned = np.where(pin, 0.0, rhs)
    V, _ = solve_sparse(A, pinned, direct=True, rtol=SLICE_RESIDUAL)

    residual = float(np.abs(-L @ V - rhs).max())
    if residual > SLICE_RESIDUAL * max(1.0, float(np.abs(values).max())):
        raise IllConditioned(f"slice residual {residual:.3g}")
    k = op.d - 1
    return GridFunction(V.reshape((M,) * k), (1.0 / M,) * k, measure.chart), f_perp


def solve_oscillating_cell(
    op: ProjectedOperator, f: Callable[[np.ndarray], np.ndarray], N: int
) -> Tuple[GridFunction, OscillatingProfile]:
    """Assemble the slice solutions of every slice class of the N^d torus grid

    Returns Ṽ on the torus grid, with zero mean on each slice, and the profile
    f^⊥ at the class offsets s = c·r_e/N.
    """
    e = op.direction
    chart = slice_lattice_basis(e)
    l = dual_vector(e)
    index = torus_nodes(e.d - 1, N)
    values = np.zeros((N,) * e.d)
    f_perp = np.zeros(N)
    for c in range(N):
        origin = (c * l) % N
        solution, f_perp[c] = solve_slice_cell(op, chart.with_origin(origin / N), f, N)
        nodes = (origin + index @ chart.basis.T) % N
        slice_values = solution.values.ravel()
        values[tuple(nodes.T)] = slice_values - slice_values.mean()
    logging.debug("Assembled %s slice problems for %s", N, e.entry())
    return (
        GridFunction(values, (1.0 / N,) * e.d),
        OscillatingProfile(e, np.arange(N) * e.period / N, f_perp),
    )


def _lattice_ball(d: int, K: float) -> np.ndarray:
    """All k in Z^d with 0 < ‖k‖ ≤ K, shape (n, d)"""
    R = int(math.floor(K))
    box = np.indices((2 * R + 1,) * d).reshape(d, -1).T - R
    norms = np.linalg.norm(box, axis=1)
    keep = (norms > 0) & (norms <= K + 1e-12)
    order = np.argsort(norms[keep], kind="stable")
    return box[keep][order]


def diophantine_check(e, C_e: float, tau: float, K_max: float):
    """Return (passed, worst k, worst ‖k − <k,e>e‖·‖k‖^τ) over 0 < ‖k‖ ≤ K_max"""
    if K_max < 1:
        raise ValueError("K_max must be at least 1")
    e = e.vector if isinstance(e, Direction) else np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    ks = _lattice_ball(e.size, K_max)
    projected = ks - np.outer(ks @ e, e)
    scores = np.linalg.norm(projected, axis=1) * np.linalg.norm(ks, axis=1) ** tau
    worst = int(np.argmin(scores))
    value = float(scores[worst])
    k = ks[worst]
    if k[np.flatnonzero(k)[0]] < 0:
        k = -k
    return value >= C_e, tuple(int(c) for c in k), value


def _grid_size(modes) -> int:
    kmax = max((max(abs(c) for c in k) for k in modes), default=0)
    N = 16
    while N < 2 * kmax + 2:
        N *= 2
    return N


def fourier_corrector(
    field: CoefficientField, e: Direction, K: float, N: Optional[int] = None
) -> Corrector:
    """Solve tr(P a P D²V) = m − m̄ by Fourier series truncated at ‖k‖ ≤ K

    Needs a constant diffusion matrix and a trigonometric-polynomial mobility;
    the coefficient of mode k is −m̂(k)/(4π² <a Pk, Pk>).
    """
    if field.constant_a is None or field.m_series is None:
        raise ValueError(
            "fourier_corrector needs constant a and a trigonometric mobility"
        )
    vector = e.vector
    P = np.eye(field.d) - np.outer(vector, vector)
    # constant_a marks y-independence; the value still depends on e
    a = P @ field.a(np.zeros((1, field.d)), vector)[0] @ P

    ball = _lattice_ball(field.d, K)
    divisors = np.linalg.norm(ball @ P, axis=1)
    if np.any(divisors < DIVISOR_FLOOR):
        k = ball[int(np.argmin(divisors))]
        raise SmallDivisor(f"k={k.tolist()} is orthogonal to the slices of {e.entry()}")

    retained = [
        (np.asarray(k, dtype=float), c, s)
        for k, c, s in field.m_series.modes
        if 0 < np.linalg.norm(k) <= K
    ]
    if N is None:
        N = _grid_size([k for k, _, _ in retained])
    points = torus_nodes(field.d, N) / N

    V = np.zeros(points.shape[0])
    for k, c, s in retained:
        Pk = P @ k
        weight = -1.0 / (4.0 * math.pi**2 * (Pk @ a @ Pk))
        phase = 2.0 * math.pi * (points @ k)
        V += weight * (c * np.cos(phase) + s * np.sin(phase))
    V = V.reshape((N,) * field.d)

    # spectral application of tr(P a P D²·) on the grid
    freqs = np.meshgrid(*([np.fft.fftfreq(N, 1.0 / N)] * field.d), indexing="ij")
    k_grid = np.stack(freqs, axis=-1)
    symbol = -4.0 * math.pi**2 * np.einsum("...i,ij,...j->...", k_grid, a, k_grid)
    applied = np.real(np.fft.ifftn(symbol * np.fft.fftn(V)))
    target = field.m(points, vector).reshape(V.shape) - field.m_series.constant
    residual = float(np.abs(applied - target).max())

    tail = field.m_series.tail(K)
    tolerance = tail + 1e-8 + 10.0 * np.finfo(float).eps * field.m_max
    logging.info(
        "Fourier corrector for %s: %s modes, residual %s, tail %s",
        e.entry(),
        len(retained),
        residual,
        tail,
    )
    return Corrector(
        V=GridFunction(V, (1.0 / N,) * field.d),
        delta=0.0,
        residual_inf=residual,
        mean=float(V.mean()),
        tolerance=tolerance,
    )
