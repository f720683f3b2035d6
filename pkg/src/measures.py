"""Contains invariant measures on slices and the effective tensors built from them

For a rational direction every slice carries a uniformly elliptic operator, so its
invariant density is the (unique) positive null vector of the adjoint discrete
generator. Effective and limiting tensors are quadratures against these densities.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from src.coeffs import CoefficientField, ProjectedOperator, project_A
from src.grids import OscillatingProfile, slice_generator, uniform_offsets
from src.lattice import ApproachSpec, Direction, SliceChart, slice_lattice_basis
from src.utils.errors import (
    EllipticityViolation,
    NullspaceDegenerate,
    SequenceNotSettled,
)

SHIFT = 1e-8
POWER_STEPS = 3
STATIONARITY_TOL = 1e-8
SETTLED = 1e-10


@dataclass(frozen=True, eq=False)
class InvariantMeasure:
    """Density ρ of μ_e^s on the slice grid, normalized so that mean(ρ) = 1"""

    chart: SliceChart
    M: int
    rho: np.ndarray
    generator: sp.csr_matrix = field(repr=False)
    residual: float = 0.0

    def integrate(self, values: np.ndarray):
        """∫ values dμ for nodal scalars (n,) or tensors (n, d, d)"""
        weights = self.rho.ravel()
        return np.tensordot(weights, values, axes=(0, 0)) / weights.size

    def stationarity_pairing(self, phi: np.ndarray) -> float:
        """∫ (L φ) ρ for nodal values φ; zero for an invariant measure"""
        return float(np.mean((self.generator @ np.ravel(phi)) * self.rho.ravel()))

    def bin_average(self, bins: int) -> np.ndarray:
        """Trapezoidal averages of ρ over bins^(d-1) equal cells"""
        return bin_average(self.rho, bins)


def bin_average(rho: np.ndarray, bins: int) -> np.ndarray:
    """Average a periodic nodal density over equal cells, trapezoidal along each axis"""
    M = rho.shape[0]
    if M % bins:
        raise ValueError(f"grid {M} is not a multiple of {bins} bins")
    r = M // bins
    weights = np.zeros((bins, M))
    for b in range(bins):
        for i in range(r + 1):
            w = 0.5 if i in (0, r) else 1.0
            weights[b, (b * r + i) % M] += w / r
    result = rho
    for axis in range(rho.ndim):
        result = np.moveaxis(np.tensordot(weights, result, axes=(1, axis)), 0, axis)
    return result


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance of two densities on the same uniform grid"""
    return 0.5 * float(np.mean(np.abs(np.asarray(p) - np.asarray(q))))


def invariant_measure_slice(
    op: ProjectedOperator, chart: SliceChart, M: int
) -> InvariantMeasure:
    """Invariant density of tr(b D²·) on the slice, by shifted inverse iteration"""
    if not op.direction.is_rational:
        raise ValueError("slice measures need a rational direction")
    L, _ = slice_generator(op, chart, M)
    n = L.shape[0]
    lu = spla.splu((L.T - SHIFT * sp.identity(n)).tocsc())

    candidates = []
    for start in (np.ones(n), np.random.default_rng(0).random(n) + 0.5):
        x = start
        for _ in range(POWER_STEPS):
            x = lu.solve(x)
            x /= np.abs(x).max()
        candidates.append(x / x.mean())
    if np.abs(candidates[0] - candidates[1]).max() > 1e-8 * np.abs(candidates[0]).max():
        raise NullspaceDegenerate("adjoint null space is not one-dimensional")

    rho = candidates[0]
    rho[rho < 1e-14 * rho.max()] = 0.0
    rho /= rho.mean()
    if rho.min() <= 0:
        raise NullspaceDegenerate("invariant density does not have full support")
    residual = float(
        np.abs(L.T @ rho).max() / (np.abs(L.diagonal()).max() * rho.max())
    )
    if residual > STATIONARITY_TOL:
        raise NullspaceDegenerate(f"adjoint residual {residual:.3g} too large")

    logging.debug(
        "Slice measure s=%s M=%s: rho in [%s, %s]",
        chart.offset,
        M,
        rho.min(),
        rho.max(),
    )
    return InvariantMeasure(
        chart=chart,
        M=M,
        rho=rho.reshape((M,) * (op.d - 1)),
        generator=L,
        residual=residual,
    )


def _offsets(e: Direction, s_grid) -> np.ndarray:
    if isinstance(s_grid, (int, np.integer)):
        return uniform_offsets(e, int(s_grid))
    return np.asarray(s_grid, dtype=float)


def oscillating_tensors(
    field: CoefficientField, e: Direction, s_grid, M: int
) -> Tuple[OscillatingProfile, OscillatingProfile]:
    """Return the profiles a_e^⊥(s) = ∫ a dμ_e^s and m_e^⊥(s) = ∫ m dμ_e^s"""
    op = project_A(field, e)
    offsets = _offsets(e, s_grid)
    chart = slice_lattice_basis(e)
    a_values, m_values = [], []
    for s in offsets:
        measure = invariant_measure_slice(op, chart.with_offset(s), M)
        points = measure.chart.points(M)
        a_values.append(measure.integrate(field.a(points, e.vector)))
        m_values.append(measure.integrate(field.m(points, e.vector)))
    return (
        OscillatingProfile(e, offsets, np.array(a_values)),
        OscillatingProfile(e, offsets, np.array(m_values)),
    )


def _check_tangent(e: Direction, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (e.d,):
        raise ValueError(f"eta must have {e.d} components")
    if abs(np.linalg.norm(eta) - 1.0) > 1e-10 or abs(eta @ e.vector) > 1e-10:
        raise ValueError("eta must be a unit vector orthogonal to e")
    return eta


def limiting_tensors(
    field: CoefficientField,
    e: Direction,
    eta,
    s_grid=16,
    M: int = 64,
    profiles: Optional[Tuple[OscillatingProfile, OscillatingProfile]] = None,
):
    """Return (weights, ã_e^η, m̃_e^η)

    The weights w(s) ∝ <a_e^⊥(s)η, η>⁻¹ are returned as a density with respect to
    ds/r_e. Non-uniform s-grids are integrated by the periodic trapezoid rule.
    """
    eta = _check_tangent(e, eta)
    a_perp, m_perp = profiles or oscillating_tensors(field, e, s_grid, M)
    quadrature = a_perp.quadrature_weights()
    q = np.einsum("i,sij,j->s", eta, a_perp.values, eta)
    weights = 1.0 / q
    weights /= quadrature @ weights
    a_tilde = np.tensordot(quadrature * weights, a_perp.values, axes=(0, 0))
    m_tilde = float((quadrature * weights) @ m_perp.values)
    return OscillatingProfile(e, a_perp.s_grid, weights), a_tilde, m_tilde


@dataclass(frozen=True, eq=False)
class EffectiveTensors:
    """ā(e), m̄(e), m̄_pl(e), the oscillating profiles and requested limiting tensors"""

    direction: Direction
    a_bar: np.ndarray
    m_bar: float
    m_pl: float
    a_perp: Optional[OscillatingProfile] = None
    m_perp: Optional[OscillatingProfile] = None
    tilde: Dict[Tuple[float, ...], Tuple[np.ndarray, float]] = field(
        default_factory=dict
    )


def _restricted_eigenvalues(e: Direction, a: np.ndarray) -> np.ndarray:
    frame = slice_lattice_basis(e).frame
    return np.linalg.eigvalsh(frame.T @ a @ frame)


def effective_tensors(
    field: CoefficientField, e: Direction, s_grid=16, M: int = 64, etas: Sequence = ()
) -> EffectiveTensors:
    """Foliation averages of the slice measures for a rational direction"""
    a_perp, m_perp = oscillating_tensors(field, e, s_grid, M)
    a_bar = a_perp.average()
    m_bar = float(m_perp.average())

    eig = _restricted_eigenvalues(e, a_bar)
    if eig[0] < field.lam - 1e-9 or eig[-1] > field.Lam + 1e-9:
        raise EllipticityViolation(f"effective tensor eigenvalues {eig} out of bounds")

    tilde = {}
    for eta in etas:
        _, a_tilde, m_tilde = limiting_tensors(
            field, e, eta, profiles=(a_perp, m_perp)
        )
        tilde[tuple(float(c) for c in eta)] = (a_tilde, m_tilde)
    return EffectiveTensors(
        direction=e,
        a_bar=a_bar,
        m_bar=m_bar,
        m_pl=m_bar,
        a_perp=a_perp,
        m_perp=m_perp,
        tilde=tilde,
    )


@dataclass(frozen=True, eq=False)
class TensorSequence:
    """Effective tensors along an approach sequence and their extrapolated limit"""

    approach: ApproachSpec
    terms: List[EffectiveTensors]
    a_limit: np.ndarray
    m_limit: float
    error: float
    gaps: List[float]


def _aitken(sequence: np.ndarray) -> Tuple[np.ndarray, float]:
    """Elementwise Aitken Δ² on the last three terms, falling back to the last term"""
    sequence = np.asarray(sequence, dtype=float)
    last = sequence[-1]
    if len(sequence) < 3:
        gap = np.abs(sequence[-1] - sequence[0]).max() if len(sequence) > 1 else 0.0
        return last, float(gap)
    x0, x1, x2 = sequence[-3:]
    d1, d2 = x1 - x0, x2 - x1
    denominator = d2 - d1
    with np.errstate(divide="ignore", invalid="ignore"):
        limit = np.where(
            np.abs(denominator) > 1e-14, x2 - d2**2 / denominator, x2
        )
    # geometric-rate assumption broken: keep the last term
    unreliable = np.abs(limit - x2) > 10.0 * np.abs(d2) + 1e-15
    limit = np.where(unreliable, x2, limit)
    return limit, float(np.abs(limit - x2).max() + np.abs(d2).max())


def effective_tensors_irrational(
    field: CoefficientField, approach: ApproachSpec, M: int = 48, s_grid=4
) -> TensorSequence:
    """Effective tensors at every e_n of the approach and their Aitken limit"""
    terms = [effective_tensors(field, en, s_grid, M) for en in approach.sequence]
    a_seq = np.array([t.a_bar for t in terms])
    m_seq = np.array([t.m_bar for t in terms])
    gaps = [
        float(np.linalg.norm(a_seq[i + 1] - a_seq[i], 2) + abs(m_seq[i + 1] - m_seq[i]))
        for i in range(len(terms) - 1)
    ]
    for i in range(1, len(gaps)):
        if gaps[i] > gaps[i - 1] and gaps[i] > SETTLED:
            raise SequenceNotSettled(f"gaps do not decrease: {gaps}")

    a_limit, a_error = _aitken(a_seq)
    m_limit, m_error = _aitken(m_seq)
    logging.info(
        "Approach to %s: gaps %s, limit error %s",
        approach.e.entry(),
        gaps,
        max(a_error, m_error),
    )
    return TensorSequence(
        approach=approach,
        terms=terms,
        a_limit=(a_limit + a_limit.T) / 2.0,
        m_limit=float(m_limit),
        error=max(a_error, m_error),
        gaps=gaps,
    )


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Histogram density of diffusion samples on the slice, mean one over the bins"""

    chart: SliceChart
    bins: int
    density: np.ndarray
    samples: int


def sde_empirical_measure(
    op: ProjectedOperator,
    chart: SliceChart,
    steps: int,
    dt: float,
    seed: int,
    bins: int = 32,
    chains: int = 64,
    burn_in: float = 0.1,
) -> EmpiricalMeasure:
    """Euler–Maruyama histogram of dt = σ dB on the slice chart, σσᵀ = 2C

    `steps` is the total over all chains; chain c draws from seed + c, so the result
    does not depend on how the work is scheduled.
    """
    k = op.d - 1
    step_bound = (1.0 / bins) ** 2 / (2.0 * op.field.Lam * k)
    if dt > step_bound:
        logging.warning("dt=%s exceeds the recommended %s", dt, step_bound)

    per_chain = math.ceil(steps / chains) if steps > 0 else 0
    start = int(burn_in * per_chain)
    rngs = [np.random.default_rng(seed + c) for c in range(chains)]
    pinv = chart.pseudo_inverse
    basis = chart.basis.astype(float)
    t = np.zeros((chains, k))
    counts = np.zeros(bins**k)

    def record(t):
        cells = np.minimum((t * bins).astype(int), bins - 1)
        flat = np.ravel_multi_index(tuple(cells.T), (bins,) * k)
        return np.bincount(flat, minlength=bins**k)

    block = 1024
    for first in range(0, per_chain, block):
        size = min(block, per_chain - first)
        noise = np.stack([rng.standard_normal((size, k)) for rng in rngs], axis=1)
        for i in range(size):
            points = np.mod(chart.anchor + t @ basis.T, 1.0)
            C = np.einsum("ij,njk,lk->nil", pinv, op.b(points), pinv)
            sigma = np.linalg.cholesky(2.0 * C)
            step = math.sqrt(dt) * np.einsum("cij,cj->ci", sigma, noise[i])
            t = np.mod(t + step, 1.0)
            if first + i >= start:
                counts += record(t)

    if counts.sum() == 0:
        counts += record(t)
    density = counts / counts.sum() * bins**k
    logging.info(
        "SDE histogram from %s samples over %s chains", int(counts.sum()), chains
    )
    return EmpiricalMeasure(
        chart=chart,
        bins=bins,
        density=density.reshape((bins,) * k),
        samples=int(counts.sum()),
    )
