"""Contains the `PulsatingWave` and `FrontState` classes and the forced front solvers

The forced problem m u_t = tr(A(x/ε, n̂) D²u) + α‖Du‖ with planar data
u = <x,e> + w is simulated on the unit cell: with u(x,t) = εU(x/ε, t/ε²) the cell
problem is m U_τ = tr(A D²U) + αε‖DU‖, so every ε uses the same periodic grid.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from src.cellsolve import Corrector, solve_oscillating_cell
from src.coeffs import CoefficientField, project_A
from src.grids import GridFunction, OscillatingProfile, torus_generator, torus_nodes
from src.lattice import Direction
from src.utils.errors import CFLViolation, GradientDegenerate, InvalidAlpha, NoMargin
from src.utils.stencil import (
    periodic_difference_stack,
    periodic_gradient,
    periodic_hessian,
)

MARGIN_TOL = 1e-12
MAX_DOUBLINGS = 40
CHECK_EVERY = 100


@dataclass(frozen=True, eq=False)
class PulsatingWave:
    """Periodic profile P on [0, r_e) with 1 + P′ = m^⊥/m̄_pl and P(0) = 0"""

    direction: Direction
    s_grid: np.ndarray
    P: np.ndarray
    dP: np.ndarray
    m_pl: float
    coefficients: np.ndarray = field(repr=False)

    def evaluate(self, s, derivative: int = 0) -> np.ndarray:
        """P or its derivatives at arbitrary s, from the Fourier representation"""
        return _fourier_sum(self.coefficients, self.direction.period, s, derivative)


def _fourier_sum(coefficients, period, s, derivative=0) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    n = coefficients.size
    omega = 2.0 * math.pi * np.fft.fftfreq(n, 1.0 / n) / period
    modes = coefficients * (1j * omega) ** derivative
    return np.real(np.exp(1j * np.multiply.outer(s, omega)) @ modes)


def pulsating_profile(
    m_perp: OscillatingProfile, e: Optional[Direction] = None
) -> PulsatingWave:
    """Return m̄_pl = mean of m^⊥ and P(s) = m̄_pl⁻¹∫₀^s m^⊥ − s"""
    e = e or m_perp.direction
    values = np.asarray(m_perp.values, dtype=float)
    if np.any(values <= 0):
        raise ValueError("m_perp must be positive")
    n = values.size
    if not np.allclose(m_perp.s_grid, np.arange(n) * e.period / n, atol=1e-12):
        raise ValueError("m_perp must be sampled on the uniform grid c·r_e/n")

    m_pl = float(values.mean())
    g = values / m_pl - 1.0
    spectrum = np.fft.fft(g) / n
    wavenumbers = np.fft.fftfreq(n, 1.0 / n)
    coefficients = np.zeros(n, dtype=complex)
    active = wavenumbers != 0
    if n % 2 == 0:
        active &= np.abs(wavenumbers) != n // 2
    omega = 2.0 * math.pi * wavenumbers[active] / e.period
    coefficients[active] = spectrum[active] / (1j * omega)
    coefficients[0] = -coefficients.sum()

    s_grid = np.asarray(m_perp.s_grid, dtype=float)
    wave = PulsatingWave(
        direction=e,
        s_grid=s_grid,
        P=_fourier_sum(coefficients, e.period, s_grid),
        dP=g,
        m_pl=m_pl,
        coefficients=coefficients,
    )
    logging.debug(
        "Pulsating wave for %s: m_pl=%s, max|P|=%s",
        e.entry(),
        m_pl,
        np.abs(wave.P).max(),
    )
    return wave


def oscillating_corrector(
    field: CoefficientField, e: Direction, N: int
) -> Tuple[Corrector, OscillatingProfile]:
    """Return Ṽ with tr(A(y,e) D²Ṽ) = m − m^⊥ on the N^d grid, and the profile m^⊥"""
    op = project_A(field, e)
    solution, m_perp = solve_oscillating_cell(op, op.m, N)
    V = -solution.values

    L, points, classes = torus_generator(op, N)
    target = op.m(points) - m_perp.values[classes]
    residual = float(np.abs(L @ V.ravel() - target).max())
    return (
        Corrector(
            V=GridFunction(V, solution.h),
            delta=0.0,
            residual_inf=residual,
            mean=float(V.mean()),
            tolerance=1e-8 * max(1.0, field.m_max),
        ),
        m_perp,
    )


def _traveling_residual(field, e, alpha, epsilon, V, wave, beta) -> np.ndarray:
    """m u_t − tr(A D²u) − α‖Du‖ of the ansatz with speed parameter β, cell grid"""
    N, d = V.shape[0], V.ndim
    h = 1.0 / N
    y = torus_nodes(d, N) / N
    vector = e.vector
    s = y @ vector
    DV = periodic_gradient(V, h).reshape(-1, d)
    D2V = periodic_hessian(V, h).reshape(-1, d, d)
    scale = beta / wave.m_pl

    Du = (1.0 + wave.evaluate(s, 1))[:, None] * vector + epsilon * scale * DV
    curvature = wave.evaluate(s, 2) / epsilon
    normal_part = curvature[:, None, None] * np.outer(vector, vector)
    D2u = normal_part + scale * D2V
    norm = np.linalg.norm(Du, axis=1)
    normal = Du / norm[:, None]
    P = np.eye(d) - np.einsum("ni,nj->nij", normal, normal)
    A = np.einsum("nij,njk,nkl->nil", P, field.a(y, normal), P)
    return field.m(y, normal) * scale - np.einsum("nij,nji->n", A, D2u) - alpha * norm


def _search(residual, alpha, step, upward: bool) -> float:
    """Smallest β ≥ α (or largest β ≤ α) at which the residual has the required sign"""
    tol = MARGIN_TOL * (1.0 + abs(alpha))
    sign = 1.0 if upward else -1.0

    def ok(beta):
        values = residual(beta)
        return values.min() >= -tol if upward else values.max() <= tol

    if ok(alpha):
        return alpha
    inner, outer = alpha, alpha + sign * step
    for _ in range(MAX_DOUBLINGS):
        if ok(outer):
            break
        inner, step = outer, 2.0 * step
        outer = alpha + sign * step
    else:
        kind = "super" if upward else "sub"
        raise NoMargin(f"no {kind}solution found near alpha={alpha}")
    while abs(outer - inner) > tol:
        middle = 0.5 * (inner + outer)
        if ok(middle):
            outer = middle
        else:
            inner = middle
    return outer


def verify_traveling(
    field: CoefficientField,
    e: Direction,
    alpha: float,
    epsilon: float,
    V_tilde: Corrector,
    wave: PulsatingWave,
) -> Tuple[float, float, float]:
    """Return (α⁺, α⁻, margin) for the traveling super- and subsolutions

    u^± = <x,e> + εP(<x,e>/ε) + α^± m̄⁻¹(ε²Ṽ(x/ε) + t) is a supersolution for
    β = α⁺ and a subsolution for β = α⁻; `margin` is the smaller of min R(α⁺) and
    −max R(α⁻).
    """
    if alpha == 0:
        raise InvalidAlpha("traveling solutions need alpha != 0")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if V_tilde.residual_inf > max(V_tilde.tolerance, 1e-8):
        raise ValueError(f"corrector residual {V_tilde.residual_inf:.3g} too large")
    V = V_tilde.V.values

    def residual(beta):
        return _traveling_residual(field, e, alpha, epsilon, V, wave, beta)

    step = epsilon * max(1.0, abs(alpha))
    alpha_plus = _search(residual, alpha, step, upward=True)
    alpha_minus = _search(residual, alpha, step, upward=False)
    for bound in (alpha_plus, alpha_minus):
        if abs(bound - alpha) > abs(alpha):
            raise NoMargin(
                f"epsilon={epsilon} too large: bound {bound} vs alpha={alpha}"
            )
    margin = min(float(residual(alpha_plus).min()), float(-residual(alpha_minus).max()))
    logging.info(
        "Traveling bounds for %s alpha=%s eps=%s: [%s, %s]",
        e.entry(),
        alpha,
        epsilon,
        alpha_minus,
        alpha_plus,
    )
    return alpha_plus, alpha_minus, margin


@dataclass(frozen=True, eq=False)
class FrontState:
    """Final perturbation w of u = <x,e> + w and the recorded mean-w time series"""

    direction: Direction
    epsilon: float
    alpha: float
    w: GridFunction
    t: float
    speed: float
    fit_residual: float
    times: np.ndarray = field(repr=False)
    means: np.ndarray = field(repr=False)
    window: Tuple[float, float] = (0.0, 0.0)
    dt: float = 0.0


def _upwind_norm(U_minus: np.ndarray, U_plus: np.ndarray, alpha: float) -> np.ndarray:
    """Osher–Sethian magnitude of DU for U_τ = α‖DU‖ from one-sided differences"""
    if alpha >= 0:
        squares = np.minimum(U_minus, 0.0) ** 2 + np.maximum(U_plus, 0.0) ** 2
    else:
        squares = np.maximum(U_minus, 0.0) ** 2 + np.minimum(U_plus, 0.0) ** 2
    return np.sqrt(squares.sum(axis=-1))


def _fit_speed(
    times: np.ndarray, means: np.ndarray, period: float
) -> Tuple[float, float, Tuple[float, float]]:
    """Least-squares slope over the last half, refined over whole pulsation periods"""
    start = times[-1] / 2.0
    window = times >= start
    slope, intercept = np.polyfit(times[window], means[window], 1)
    fit = slope * times[window] + intercept
    residual = float(np.abs(means[window] - fit).max())

    speed = float(slope)
    for _ in range(5):
        if speed == 0:
            break
        pulsation = period / abs(speed)
        cycles = math.floor((times[-1] - start) / pulsation)
        if cycles < 1:
            break
        span = cycles * pulsation
        earlier = np.interp(times[-1] - span, times, means)
        speed = float((means[-1] - earlier) / span)
    return speed, residual, (float(start), float(times[-1]))


def _evolve(field, e, alpha_cell, N, tau_final, dt, grad_floor, strict=False):
    """Forward Euler in cell time τ; returns W, τ-grid, mean-W series and dt

    Every CHECK_EVERY steps the slope |Dw| is compared with 1: leaving the unit
    cone raises GradientDegenerate when `strict`, otherwise it is logged once.
    """
    d = field.d
    h = 1.0 / N
    vector = e.vector
    y = torus_nodes(d, N) / N
    shape = (N,) * d

    dt_auto = 0.2 * h**2 * field.m_min / (field.Lam * d)
    if alpha_cell:
        dt_auto = min(dt_auto, 0.5 * h * field.m_min / abs(alpha_cell))
    if dt is None:
        dt = dt_auto
    elif dt > h**2 * field.m_min / (4.0 * field.Lam * d):
        limit = h**2 * field.m_min / (4.0 * field.Lam * d)
        raise CFLViolation(f"dt={dt} exceeds {limit}")
    steps = max(1, math.ceil(tau_final / dt))
    dt = tau_final / steps

    cached_a = None if field.e_dependent else field.a(y, vector)
    cached_m = None if field.e_dependent else field.m(y, vector)
    stencil, pairs = periodic_difference_stack(shape, h)
    n = N**d

    W = np.zeros(n)
    means = np.empty(steps + 1)
    means[0] = 0.0
    hess = np.empty((n, d, d))
    warned = False
    for step in range(1, steps + 1):
        blocks = (stencil @ W).reshape(-1, n)
        U_minus = blocks[:d].T + vector
        U_plus = blocks[d : 2 * d].T + vector
        grad = 0.5 * (U_minus + U_plus)
        norm = np.linalg.norm(grad, axis=1)
        if norm.min() < grad_floor:
            raise GradientDegenerate(
                f"|Du| = {norm.min():.3g} below {grad_floor} at step {step}"
            )
        normal = grad / norm[:, None]
        a = cached_a if cached_a is not None else field.a(y, normal)
        m = cached_m if cached_m is not None else field.m(y, normal)
        P = np.eye(d) - np.einsum("ni,nj->nij", normal, normal)
        A = P @ a @ P
        for index, (i, j) in enumerate(pairs):
            hess[:, i, j] = hess[:, j, i] = blocks[2 * d + index]
        diffusion = np.einsum("nij,nji->n", A, hess)
        transport = _upwind_norm(U_minus, U_plus, alpha_cell)
        W = W + dt * (diffusion + alpha_cell * transport) / m
        means[step] = W.mean()

        if step % CHECK_EVERY == 0:
            if not np.all(np.isfinite(W)):
                raise GradientDegenerate(
                    f"front values became non-finite at step {step}"
                )
            slope = np.abs(grad - vector).max()
            if slope >= 1.0 and strict:
                raise GradientDegenerate(
                    f"|Dw| = {slope:.3g} left the unit cone at step {step}"
                )
            if slope >= 1.0 and not warned:
                logging.warning("|Dw| = %s left the unit cone at step %s", slope, step)
                warned = True
    return W.reshape(shape), np.arange(steps + 1) * dt, means, dt


def simulate_front(
    field: CoefficientField,
    e: Direction,
    alpha: float,
    epsilon: float,
    T_final: float,
    grid: int,
    dt: Optional[float] = None,
    grad_floor: float = 0.2,
    strict: bool = False,
) -> FrontState:
    """Evolve planar data under the forced problem at scale ε and fit the front speed

    `dt` is in cell time τ = t/ε²; `speed` approaches α/m̄_pl(e) as ε → 0.
    With `strict`, slopes |Dw| >= 1 abort the run instead of being logged.
    """
    if alpha == 0:
        raise InvalidAlpha("front simulation needs alpha != 0")
    if not e.is_rational:
        raise ValueError("front simulation needs a rational direction")
    if epsilon <= 0 or T_final <= 0:
        raise ValueError("epsilon and T_final must be positive")

    W, taus, means, dt_used = _evolve(
        field, e, alpha * epsilon, grid, T_final / epsilon**2, dt, grad_floor, strict
    )
    speed_cell, fit_residual, window = _fit_speed(taus, means, e.period)
    times = taus * epsilon**2
    state = FrontState(
        direction=e,
        epsilon=epsilon,
        alpha=alpha,
        w=GridFunction(epsilon * W, (epsilon / grid,) * field.d),
        t=float(times[-1]),
        speed=speed_cell / epsilon,
        fit_residual=epsilon * fit_residual,
        times=times,
        means=epsilon * means,
        window=(window[0] * epsilon**2, window[1] * epsilon**2),
        dt=dt_used,
    )
    logging.info(
        "Front %s alpha=%s eps=%s: speed %s after %s steps",
        e.entry(),
        alpha,
        epsilon,
        state.speed,
        len(taus) - 1,
    )
    return state


def front_speed_2d(
    field: CoefficientField,
    e: Direction,
    alpha: float,
    T_final: float,
    grid: int,
    dt: Optional[float] = None,
    grad_floor: float = 0.2,
) -> float:
    """λ_e(α): long-time speed of the forced front at ε = 1 in two dimensions"""
    if field.d != 2:
        raise ValueError("front_speed_2d is two-dimensional")
    return simulate_front(field, e, alpha, 1.0, T_final, grid, dt, grad_floor).speed
