"""Contains the `CoefficientField` and `ProjectedOperator` classes and built-in families

Coefficients are closed-form trigonometric fields, so pulling them back to any
slice or cube grid is an exact evaluation. Evaluators take points `y` of shape
(n, d) and a direction `e` of shape (d,) or (n, d).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from src.lattice import Direction
from src.utils.errors import EllipticityViolation, UnknownFamily

FAMILIES = ("constant", "isotropic-trig", "laminar", "anisotropic-trig")

Mode = Tuple[Tuple[int, ...], float, float]


@dataclass(frozen=True)
class TrigPolynomial:
    """c0 + sum over modes of c·cos(2π<k,y>) + s·sin(2π<k,y>)"""

    constant: float
    modes: Tuple[Mode, ...] = ()

    @classmethod
    def from_entries(cls, constant, entries=()) -> "TrigPolynomial":
        """Build from config entries `[k, cos_amp]` or `[k, cos_amp, sin_amp]`"""
        modes = []
        for entry in entries:
            k = tuple(int(c) for c in entry[0])
            cos_amp = float(entry[1])
            sin_amp = float(entry[2]) if len(entry) > 2 else 0.0
            modes.append((k, cos_amp, sin_amp))
        return cls(float(constant), tuple(modes))

    @property
    def amplitude(self) -> float:
        return sum(abs(c) + abs(s) for _, c, s in self.modes)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        values = np.full(y.shape[0], self.constant)
        for k, c, s in self.modes:
            phase = 2.0 * math.pi * (y @ np.asarray(k, dtype=float))
            values = values + c * np.cos(phase) + s * np.sin(phase)
        return values

    def tail(self, K: float) -> float:
        """Sum of |amplitudes| of the modes with |k| > K"""
        return sum(
            abs(c) + abs(s) for k, c, s in self.modes if np.linalg.norm(k) > K
        )


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Evaluators for the diffusion matrix a(y,e) and the mobility m(y,e)"""

    d: int
    a: Callable[[np.ndarray, np.ndarray], np.ndarray]
    m: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lam: float
    Lam: float
    m_min: float
    m_max: float
    family: str = "custom"
    e_dependent: bool = False
    m_series: Optional[TrigPolynomial] = None
    constant_a: Optional[np.ndarray] = field(default=None, repr=False)
    params: Dict[str, Any] = field(default_factory=dict, repr=False)


@dataclass(frozen=True, eq=False)
class ProjectedOperator:
    """b(y) = P a(y,e) P with P = Id − e⊗e, together with m_e(y) = m(y,e)"""

    field: CoefficientField
    direction: Direction

    @property
    def d(self) -> int:
        return self.field.d

    @property
    def projector(self) -> np.ndarray:
        e = self.direction.vector
        return np.eye(self.d) - np.outer(e, e)

    def b(self, y: np.ndarray) -> np.ndarray:
        P = self.projector
        a = self.field.a(np.atleast_2d(y), self.direction.vector)
        return np.einsum("ij,njk,kl->nil", P, a, P)

    def m(self, y: np.ndarray) -> np.ndarray:
        return self.field.m(np.atleast_2d(y), self.direction.vector)

    def drive(self, y: np.ndarray, X: np.ndarray) -> np.ndarray:
        """tr(b(y) X) at every point"""
        return np.einsum("nij,ji->n", self.b(y), np.asarray(X, dtype=float))

    def chart_coefficients(self, y: np.ndarray, basis: np.ndarray) -> np.ndarray:
        """C = B⁺ b B⁺ᵀ, so that tr(b D²V) = sum C_ij ∂_{b_i}∂_{b_j} V"""
        pinv = np.linalg.pinv(np.asarray(basis, dtype=float))
        return np.einsum("ij,njk,lk->nil", pinv, self.b(y), pinv)


def project_A(field: CoefficientField, e: Direction) -> ProjectedOperator:
    """Return the projected operator of `field` in direction `e`"""
    if e.d != field.d:
        raise ValueError(f"direction has dimension {e.d}, field has {field.d}")
    return ProjectedOperator(field=field, direction=e)


def verify_ellipticity(field: CoefficientField, n_samples: int, seed=0):
    """Return empirical (λ̂, Λ̂, m̂_min) over quasi-random (y, e) samples

    Points y come from an unscrambled Halton sequence (it starts at the origin),
    directions from a seeded Gaussian sample normalized to the sphere.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    y = qmc.Halton(d=field.d, scramble=False).random(n_samples)
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((n_samples, field.d))
    e /= np.linalg.norm(e, axis=1, keepdims=True)

    eigenvalues = np.linalg.eigvalsh(field.a(y, e))
    mobility = field.m(y, e)
    lam_hat, Lam_hat = float(eigenvalues.min()), float(eigenvalues.max())
    m_hat = float(mobility.min())

    if lam_hat < field.lam - 1e-9:
        i = int(np.argmin(eigenvalues.min(axis=1)))
        raise EllipticityViolation(
            f"eigenvalue {lam_hat:.6g} below lambda={field.lam:.6g}", (y[i], e[i])
        )
    if Lam_hat > field.Lam + 1e-9:
        i = int(np.argmax(eigenvalues.max(axis=1)))
        raise EllipticityViolation(
            f"eigenvalue {Lam_hat:.6g} above Lambda={field.Lam:.6g}", (y[i], e[i])
        )
    if m_hat <= 0:
        i = int(np.argmin(mobility))
        raise EllipticityViolation(f"mobility {m_hat:.6g} not positive", (y[i], e[i]))

    logging.info(
        "Ellipticity of %s over %s samples: [%s, %s], m_min=%s",
        field.family,
        n_samples,
        lam_hat,
        Lam_hat,
        m_hat,
    )
    return lam_hat, Lam_hat, m_hat


def check_periodic(field: CoefficientField, n_samples=64, seed=0) -> float:
    """Largest change of a, m under y -> y + unit vector, over random samples"""
    rng = np.random.default_rng(seed)
    y = rng.random((n_samples, field.d))
    e = np.eye(field.d)[-1]
    worst = 0.0
    for i in range(field.d):
        shifted = y + np.eye(field.d)[i]
        worst = max(
            worst,
            float(np.abs(field.a(shifted, e) - field.a(y, e)).max()),
            float(np.abs(field.m(shifted, e) - field.m(y, e)).max()),
        )
    return worst


def _matrix(value, d: int) -> np.ndarray:
    """A scalar, diagonal list or full matrix parameter as a d×d array"""
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return float(value) * np.eye(d)
    if value.ndim == 1:
        return np.diag(value)
    return value


def _cosines(y: np.ndarray, terms: Sequence[Tuple[np.ndarray, float]]) -> np.ndarray:
    """Per-term cos(2π<k,y>) values, shape (len(terms), n)"""
    return np.array([np.cos(2.0 * math.pi * (y @ k)) for k, _ in terms]).reshape(
        len(terms), y.shape[0]
    )


def _infer_dimension(params: Dict[str, Any]) -> int:
    if "dim" in params:
        return int(params["dim"])
    for key in ("a0", "S"):
        value = np.asarray(params.get(key, 0.0))
        if value.ndim >= 1:
            return value.shape[-1]
    for key in ("k", "eta"):
        if key in params:
            return len(params[key])
    for key in ("modes", "terms", "m_modes"):
        if params.get(key):
            return len(params[key][0][0])
    return 2


def builtin_field(
    name: str, params: Optional[Dict[str, Any]] = None
) -> CoefficientField:
    """Build one of the families constant, isotropic-trig, laminar or anisotropic-trig

    Every family accepts a mobility `m0` with trigonometric modes `m_modes`
    (entries `[k, cos_amp]` or `[k, cos_amp, sin_amp]`) and an anisotropy
    strength `aniso` >= 0 that multiplies a by 1 + aniso·sum e_i⁴.
    """
    params = dict(params or {})
    if name not in FAMILIES:
        raise UnknownFamily(f"unknown coefficient family {name!r}")
    d = _infer_dimension(params)
    identity = np.eye(d)

    if name == "constant":
        a0 = _matrix(params.get("a0", 1.0), d)
        eig = np.linalg.eigvalsh(a0)
        lam, Lam = float(eig[0]), float(eig[-1])

        def a_base(y):
            return np.broadcast_to(a0, (y.shape[0], d, d)).copy()

    elif name == "isotropic-trig":
        base = float(params.get("base", 2.0))
        terms = [
            (np.asarray(k, dtype=float), float(amp))
            for k, amp in params.get("modes", [[[1] + [0] * (d - 1), 1.0]])
        ]
        spread = sum(abs(amp) for _, amp in terms)
        lam, Lam = base - spread, base + spread

        def a_base(y):
            amps = np.array([amp for _, amp in terms])
            scalar = base + amps @ _cosines(y, terms)
            return scalar[:, None, None] * identity

    elif name == "laminar":
        a0 = _matrix(params.get("a0", 1.0), d)
        nu = float(params.get("nu", 0.5))
        k = np.asarray(params.get("k", identity[-1]), dtype=float)
        eta = np.asarray(params.get("eta", identity[0]), dtype=float)
        eta = eta / np.linalg.norm(eta)
        layer = np.outer(eta, eta)
        lam = float(np.linalg.eigvalsh(a0 - abs(nu) * layer)[0])
        Lam = float(np.linalg.eigvalsh(a0 + abs(nu) * layer)[-1])

        def a_base(y):
            wave = nu * np.cos(2.0 * math.pi * (y @ k))
            return a0 + wave[:, None, None] * layer

    else:
        a0 = _matrix(params.get("a0", 1.0), d)
        terms = [
            (np.asarray(k, dtype=float), float(amp), _matrix(S, d))
            for k, amp, S in params.get("terms", [])
        ]
        spread = sum(abs(amp) * np.linalg.norm(S, 2) for _, amp, S in terms)
        eig = np.linalg.eigvalsh(a0)
        lam, Lam = float(eig[0] - spread), float(eig[-1] + spread)

        def a_base(y):
            values = np.broadcast_to(a0, (y.shape[0], d, d)).copy()
            for k, amp, S in terms:
                values += (amp * np.cos(2.0 * math.pi * (y @ k)))[:, None, None] * S
            return values

    if lam <= 0:
        raise EllipticityViolation(
            f"{name} field is not uniformly elliptic (lambda={lam})"
        )

    gamma = float(params.get("aniso", 0.0))
    if gamma < 0:
        raise ValueError("aniso must be nonnegative")
    Lam *= 1.0 + gamma

    def a(y, e):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        values = a_base(y)
        if gamma:
            e = np.asarray(e, dtype=float)
            factor = 1.0 + gamma * np.sum(e**4, axis=-1)
            values = values * np.reshape(factor, (-1, 1, 1))
        return values

    series = TrigPolynomial.from_entries(
        params.get("m0", 1.0), params.get("m_modes", ())
    )
    m_min = series.constant - series.amplitude
    if m_min <= 0:
        raise EllipticityViolation(f"mobility is not positive (m_min={m_min})")

    def m(y, e):
        return series(np.asarray(y, dtype=float))

    constant_a = None
    if name == "constant" or (name == "anisotropic-trig" and not terms):
        constant_a = a0
    return CoefficientField(
        d=d,
        a=a,
        m=m,
        lam=lam,
        Lam=Lam,
        m_min=m_min,
        m_max=series.constant + series.amplitude,
        family=name,
        e_dependent=bool(gamma),
        m_series=series,
        constant_a=constant_a,
        params=params,
    )
