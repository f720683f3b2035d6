"""Contains the obstacle problems on slice cubes and the critical-value bisection

Subsolution kind: max{−tr(b(X + D²u)) − μm, u} = 0 in the cube, u = 0 on its
boundary, coefficients evaluated at x + Q z/θ. With w = −u this is the linear
complementarity problem w ≥ 0, A w + q ≥ 0, w·(A w + q) = 0 for A = −L and
q = tr(bX) + μm; the supersolution kind uses w = u and q = −(tr(bX) + μm).
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from src.cellsolve import solve_sparse
from src.coeffs import ProjectedOperator
from src.grids import GridFunction, replace_rows_with_identity
from src.lattice import Direction, slice_lattice_basis
from src.utils.errors import BracketsDisagree, NotConverged
from src.utils.stencil import second_order_operator

KINDS = ("subsolution", "supersolution")
METHODS = ("psor", "active-set")
OMEGA = 1.5
SWEEP_TOL = 1e-10
WORK_BUDGET = 10**6
CONTACT_TOL = 1e-12
DENSITY_THRESHOLD = 1e-3


@dataclass(frozen=True, eq=False)
class ObstacleSolution:
    """Solution of one obstacle problem on the cube [0, R]^(d-1) of a slice"""

    kind: str
    direction: Direction
    X: np.ndarray
    mu: float
    R: float
    x_shift: np.ndarray
    theta: float
    u: GridFunction
    contact_mask: np.ndarray
    density: float
    residual: float
    iterations: int


def _cube_problem(op: ProjectedOperator, X, mu, R, x_shift, theta, M):
    """Return (A, q, shape, z) for the subsolution form of the complementarity system"""
    k = op.d - 1
    frame = slice_lattice_basis(op.direction).frame
    h = R / M
    shape = (M - 1,) * k
    z = (np.indices(shape).reshape(k, -1).T + 1) * h
    points = np.asarray(x_shift, dtype=float) + z @ frame.T / theta
    C = np.einsum("ji,njk,kl->nil", frame, op.b(points), frame)
    L = second_order_operator(C, shape, np.eye(k, dtype=int), h, periodic=False)
    q = op.drive(points, X) + mu * op.m(points)
    return -L, q, shape, z


def _colors(shape) -> List[np.ndarray]:
    """Index sets of the 2^(d-1) parity classes; stencil neighbours never share one"""
    index = np.indices(shape).reshape(len(shape), -1) % 2
    return [
        np.flatnonzero(np.all(index == np.asarray(parity)[:, None], axis=0))
        for parity in itertools.product((0, 1), repeat=len(shape))
    ]


def _psor(
    A: sp.csr_matrix, q: np.ndarray, colors, max_sweeps: int
) -> Tuple[np.ndarray, int]:
    w = np.zeros_like(q)
    diagonal = A.diagonal()
    blocks = [(nodes, A[nodes]) for nodes in colors]
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for nodes, rows in blocks:
            residual = rows @ w + q[nodes]
            updated = np.maximum(0.0, w[nodes] - OMEGA * residual / diagonal[nodes])
            change = max(change, float(np.abs(updated - w[nodes]).max(initial=0.0)))
            w[nodes] = updated
        if change <= SWEEP_TOL:
            return w, sweep
    raise NotConverged(f"projected SOR did not settle within {max_sweeps} sweeps")


def _active_set(
    A: sp.csr_matrix, q: np.ndarray, max_iterations: int
) -> Tuple[np.ndarray, int]:
    """Policy iteration on min(w, A w + q) = 0"""
    w = np.zeros_like(q)
    contact = None
    for iteration in range(1, max_iterations + 1):
        residual = A @ w + q
        choice = w <= residual
        if contact is not None and np.array_equal(choice, contact):
            return w, iteration
        contact = choice
        system = replace_rows_with_identity(A, contact)
        w, _ = solve_sparse(system, np.where(contact, 0.0, -q), direct=True, rtol=1e-9)
    raise NotConverged(f"active set still changing after {max_iterations} iterations")


def solve_obstacle(
    op: ProjectedOperator,
    kind: str,
    X,
    mu: float,
    R: float,
    x_shift,
    theta: float,
    M: Optional[int] = None,
    method: str = "psor",
    trim: Optional[float] = None,
    budget: int = WORK_BUDGET,
) -> ObstacleSolution:
    """Solve the sub- or supersolution obstacle problem on the slice cube of side R

    `density` is the contact fraction of the nodes at distance ≥ `trim` (default θ)
    from the cube boundary.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if R <= 0 or theta <= 0:
        raise ValueError("R and theta must be positive")
    minimum = math.ceil(8 * R / theta)
    M = M or minimum
    if M < minimum:
        raise ValueError(
            f"M={M} does not resolve the coefficient period (need {minimum})"
        )
    X = np.asarray(X, dtype=float)

    A, q, shape, z = _cube_problem(op, X, mu, R, x_shift, theta, M)
    if kind == "supersolution":
        q = -q
    n = q.size
    if method == "psor":
        w, iterations = _psor(A, q, _colors(shape), max(1, budget // n))
    else:
        w, iterations = _active_set(A, q, n + 1)

    complementarity = float(np.abs(np.minimum(w, A @ w + q)).max())
    u = -w if kind == "subsolution" else w
    scale = max(1.0, float(np.abs(u).max()))
    contact = np.abs(u) <= CONTACT_TOL * scale

    trim = theta if trim is None else trim
    inner = np.all((z >= trim) & (z <= R - trim), axis=1)
    if not inner.any():
        raise ValueError(f"trim={trim} leaves no interior nodes in a cube of side {R}")
    density = float(contact[inner].mean())
    logging.debug(
        "%s mu=%s shift=%s: density %s after %s %s iterations",
        kind,
        mu,
        x_shift,
        density,
        iterations,
        method,
    )
    return ObstacleSolution(
        kind=kind,
        direction=op.direction,
        X=X,
        mu=mu,
        R=R,
        x_shift=np.asarray(x_shift, dtype=float),
        theta=theta,
        u=GridFunction(u.reshape(shape), (R / M,) * len(shape)),
        contact_mask=contact.reshape(shape),
        density=density,
        residual=complementarity,
        iterations=iterations,
    )


@dataclass(frozen=True)
class CriticalValue:
    """μ̂ and the sub/supersolution brackets of the density transition"""

    mu_hat: float
    sub_bracket: Tuple[float, float]
    super_bracket: Tuple[float, float]
    solves: int = 0


def default_shifts(d: int) -> List[np.ndarray]:
    return [np.full(d, j / 4.0) for j in range(4)]


def critical_mu(
    op: ProjectedOperator,
    X,
    R: float,
    theta: float,
    shifts: Optional[Sequence] = None,
    tol: float = 1e-2,
    M: Optional[int] = None,
    method: str = "psor",
    threshold: float = DENSITY_THRESHOLD,
    trim: Optional[float] = None,
) -> CriticalValue:
    """Bisect on μ for the 0-to-positive transition of the shift-averaged density"""
    if tol <= 0:
        raise ValueError("tol must be positive")
    X = np.asarray(X, dtype=float)
    shifts = default_shifts(op.d) if shifts is None else list(shifts)
    coefficients = op.field
    bound = (
        coefficients.Lam
        * float(np.abs(np.linalg.eigvalsh(X)).sum())
        / coefficients.m_min
        + 1.0
    )
    solves = 0

    def in_contact(kind, mu) -> bool:
        nonlocal solves
        densities = [
            solve_obstacle(op, kind, X, mu, R, x, theta, M, method, trim).density
            for x in shifts
        ]
        solves += len(densities)
        return float(np.mean(densities)) > threshold

    def bisect(kind, increasing: bool) -> Tuple[float, float]:
        lo, hi = -bound, bound
        if in_contact(kind, lo) == increasing or in_contact(kind, hi) != increasing:
            raise NotConverged(f"{kind} density does not change sign on [{lo}, {hi}]")
        while hi - lo > tol:
            middle = 0.5 * (lo + hi)
            if in_contact(kind, middle) == increasing:
                hi = middle
            else:
                lo = middle
        return lo, hi

    sub = bisect("subsolution", increasing=True)
    sup = bisect("supersolution", increasing=False)
    lo, hi = max(sub[0], sup[0]), min(sub[1], sup[1])
    if lo - hi > 3.0 * tol:
        raise BracketsDisagree(
            f"subsolution bracket {sub} and supersolution bracket {sup}"
        )
    mu_hat = 0.5 * (lo + hi)
    logging.info(
        "Critical value %s from brackets %s and %s (%s solves)",
        mu_hat,
        sub,
        sup,
        solves,
    )
    return CriticalValue(
        mu_hat=mu_hat, sub_bracket=sub, super_bracket=sup, solves=solves
    )


def contact_growth(
    op: ProjectedOperator,
    X,
    R: float,
    theta: float,
    mu_hat: float,
    gaps: Sequence[float],
    shifts: Optional[Sequence] = None,
    M: Optional[int] = None,
    method: str = "psor",
) -> Tuple[float, np.ndarray]:
    """Fit c′ in density(μ̂ + Δ) ≥ c′Δ^d; returns c′ and the densities per Δ"""
    shifts = default_shifts(op.d) if shifts is None else list(shifts)
    gaps = np.asarray(gaps, dtype=float)
    if np.any(gaps <= 0):
        raise ValueError("gaps must be positive")
    densities = np.array(
        [
            np.mean(
                [
                    solve_obstacle(
                        op, "subsolution", X, mu_hat + gap, R, x, theta, M, method
                    ).density
                    for x in shifts
                ]
            )
            for gap in gaps
        ]
    )
    c_prime = float(np.min(densities / gaps**op.d))
    return c_prime, densities
