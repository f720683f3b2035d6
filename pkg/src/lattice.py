"""Contains the torus geometry: directions, slice charts and approach sequences

Rational directions are handled in exact integer arithmetic. The slice lattice
M_e = Z^d ∩ <e>^⊥ is obtained from a unimodular column reduction of k (extended
gcd steps), then size-reduced and sorted so the shortest vectors come first.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import reduce
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import EtaNotRepresentable, ZeroVector

UNIT_TOLERANCE = 1e-12
ETA_ANGLE = 1e-3
ETA_MAX_NORM = 1e4


@dataclass(frozen=True)
class Direction:
    """A unit vector, either rational (primitive integer k) or an irrational proxy"""

    e: Tuple[float, ...]
    k: Optional[Tuple[int, ...]] = None
    v: Optional[Tuple[float, ...]] = None
    diophantine: Optional[Tuple[float, float]] = None

    @property
    def d(self) -> int:
        return len(self.e)

    @property
    def is_rational(self) -> bool:
        return self.k is not None

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.e, dtype=float)

    @property
    def period(self) -> float:
        """The period r_e = 1/|k| of the slice foliation"""
        if self.k is None:
            raise ValueError("irrational directions have no period")
        return 1.0 / math.sqrt(sum(c * c for c in self.k))

    def entry(self) -> str:
        """Config representation, `k=[..]` or `v=[..]`"""
        if self.k is not None:
            return "k=[" + ",".join(str(c) for c in self.k) + "]"
        return "v=[" + ",".join(repr(c) for c in self.v) + "]"


def _gcd_all(values: Sequence[int]) -> int:
    return reduce(math.gcd, (abs(int(c)) for c in values), 0)


def primitive_direction(k: Sequence[int]) -> Direction:
    """Return the rational direction of the integer vector `k`, reduced by its gcd"""
    k = [int(c) for c in k]
    g = _gcd_all(k)
    if g == 0:
        raise ZeroVector("direction vector must be nonzero")
    k = tuple(c // g for c in k)
    norm = math.sqrt(sum(c * c for c in k))
    return Direction(e=tuple(c / norm for c in k), k=k)


def irrational_direction(v: Sequence[float], diophantine=None) -> Direction:
    """Return an irrational-proxy direction along the float vector `v`"""
    v = tuple(float(c) for c in v)
    norm = math.sqrt(sum(c * c for c in v))
    if norm == 0:
        raise ZeroVector("direction vector must be nonzero")
    if diophantine is not None:
        diophantine = (float(diophantine[0]), float(diophantine[1]))
    return Direction(e=tuple(c / norm for c in v), v=v, diophantine=diophantine)


def parse_direction(entry: str) -> Direction:
    """Parse a `k=[a,b]` or `v=[x,y]` config entry"""
    kind, _, body = entry.strip().partition("=")
    values = [c for c in body.strip().strip("[]").split(",") if c.strip()]
    if kind.strip() == "k":
        return primitive_direction([int(c) for c in values])
    if kind.strip() == "v":
        return irrational_direction([float(c) for c in values])
    raise ValueError(f"direction entry must start with k= or v=, got {entry!r}")


def _extended_gcd(a: int, b: int) -> Tuple[int, int, int]:
    """Return (g, x, y) with a*x + b*y = g and g >= 0"""
    x0, y0, x1, y1 = 1, 0, 0, 1
    while b:
        q = a // b
        a, b = b, a - q * b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    if a < 0:
        a, x0, y0 = -a, -x0, -y0
    return a, x0, y0


def _unimodular_columns(k: Sequence[int]) -> List[List[int]]:
    """Columns of a unimodular U with k·U = (1, 0, ..., 0) for primitive k"""
    d = len(k)
    cols = [[int(i == j) for i in range(d)] for j in range(d)]
    r = [int(c) for c in k]
    for i in range(1, d):
        if r[i] == 0:
            continue
        if r[0] == 0:
            cols[0], cols[i] = cols[i], cols[0]
            r[0], r[i] = r[i], 0
            continue
        g, x, y = _extended_gcd(r[0], r[i])
        c0, ci = cols[0], cols[i]
        cols[0] = [x * a + y * b for a, b in zip(c0, ci)]
        cols[i] = [(r[i] // g) * a - (r[0] // g) * b for a, b in zip(c0, ci)]
        r[0], r[i] = g, 0
    if r[0] < 0:
        cols[0] = [-a for a in cols[0]]
    return cols


def _dot(a, b) -> int:
    return sum(x * y for x, y in zip(a, b))


def _size_reduce(basis: List[List[int]]) -> List[List[int]]:
    """Pairwise Lagrange reduction; every accepted step strictly shortens a vector"""
    basis = [list(b) for b in basis]
    changed = True
    while changed:
        changed = False
        for i in range(len(basis)):
            for j in range(len(basis)):
                if i == j:
                    continue
                mu = round(Fraction(_dot(basis[i], basis[j]), _dot(basis[j], basis[j])))
                if mu == 0:
                    continue
                candidate = [a - mu * b for a, b in zip(basis[i], basis[j])]
                if _dot(candidate, candidate) < _dot(basis[i], basis[i]):
                    basis[i] = candidate
                    changed = True
    return basis


def _sign_normalized(b: List[int]) -> List[int]:
    for c in b:
        if c != 0:
            return b if c > 0 else [-a for a in b]
    return b


def dual_vector(e: Direction) -> np.ndarray:
    """Integer l with <l, k> = 1, so that <l, e> = r_e"""
    if not e.is_rational:
        raise ValueError("dual vector needs a rational direction")
    return np.asarray(_unimodular_columns(e.k)[0], dtype=int)


@dataclass(frozen=True, eq=False)
class SliceChart:
    """Parametrization y = anchor + B t, t in [0,1)^(d-1), of the slice at offset s"""

    direction: Direction
    basis: np.ndarray
    frame: np.ndarray
    offset: float = 0.0
    origin: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.direction.d

    @property
    def anchor(self) -> np.ndarray:
        if self.origin is not None:
            return np.asarray(self.origin, dtype=float)
        return self.offset * self.direction.vector

    @property
    def pseudo_inverse(self) -> np.ndarray:
        """B⁺ = (BᵀB)⁻¹Bᵀ, mapping tangent vectors to chart coordinates"""
        return np.linalg.pinv(self.basis.astype(float))

    def with_offset(self, s: float) -> "SliceChart":
        return replace(self, offset=float(s) % self.direction.period, origin=None)

    def with_origin(self, y0) -> "SliceChart":
        y0 = np.asarray(y0, dtype=float)
        s = float(y0 @ self.direction.vector) % self.direction.period
        return replace(self, offset=s, origin=y0)

    def coordinates(self, M: int) -> np.ndarray:
        """Chart coordinates j/M of the M^(d-1) slice grid nodes, C order"""
        shape = (M,) * (self.d - 1)
        return np.indices(shape).reshape(self.d - 1, -1).T / M

    def points(self, M: int) -> np.ndarray:
        """Torus points of the slice grid, shape (M^(d-1), d), wrapped into [0,1)^d"""
        t = self.coordinates(M)
        return np.mod(self.anchor + t @ self.basis.T, 1.0)


def slice_lattice_basis(e: Direction) -> SliceChart:
    """Chart of the slices of `e`: an integer basis of M_e and an orthonormal frame"""
    if not e.is_rational:
        raise ValueError("slice charts exist for rational directions only")
    kernel = _size_reduce(_unimodular_columns(e.k)[1:])
    kernel = [_sign_normalized(b) for b in kernel]
    kernel.sort(key=lambda b: (_dot(b, b), [-c for c in b]))
    basis = np.asarray(kernel, dtype=int).T.reshape(e.d, e.d - 1)

    q, r = np.linalg.qr(basis.astype(float))
    q = q * np.sign(np.diag(r))
    logging.debug("Slice basis for %s: %s", e.entry(), kernel)
    return SliceChart(direction=e, basis=basis, frame=q)


@dataclass(frozen=True)
class ApproachSpec:
    """Rational directions e_n approaching `e`, along -eta when eta is given"""

    e: Direction
    eta: Optional[Tuple[float, ...]]
    depth: int
    sequence: Tuple[Direction, ...]
    thetas: Tuple[float, ...]


def _primitive_vector(v: np.ndarray) -> np.ndarray:
    g = _gcd_all(v)
    return v // g if g else v


def _integer_approximation(basis: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Shortest lattice vector B·c within ETA_ANGLE of eta, scanning c = round(q·w)"""
    w = np.linalg.lstsq(basis.astype(float), eta, rcond=None)[0]
    w = w / np.max(np.abs(w))
    q = 1
    while True:
        c = np.rint(q * w).astype(int)
        v = basis @ c
        norm = float(np.linalg.norm(v))
        if norm > ETA_MAX_NORM:
            raise EtaNotRepresentable(
                f"no integer vector with norm <= {ETA_MAX_NORM:g} within "
                f"{ETA_ANGLE:g} rad of eta={eta.tolist()}"
            )
        if norm > 0 and math.acos(min(1.0, float(v @ eta) / norm)) <= ETA_ANGLE:
            return _primitive_vector(v)
        q += 1


def approach_sequence(e: Direction, eta, depth: int) -> ApproachSpec:
    """Return rational directions e_n ∝ N·c·k_e − k_eta, N = 2, 4, 8, ..."""
    if not e.is_rational:
        raise ValueError("approach sequences start from a rational direction")
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (e.d,):
        raise ValueError(f"eta must have {e.d} components")
    if abs(np.linalg.norm(eta) - 1.0) > 1e-10 or abs(eta @ e.vector) > 1e-10:
        raise ValueError("eta must be a unit vector orthogonal to e")
    if depth < 1:
        raise ValueError("depth must be positive")

    k_eta = _integer_approximation(slice_lattice_basis(e).basis, eta)
    k_e = np.asarray(e.k, dtype=int)
    scale = max(1, round(float(np.linalg.norm(k_eta) / np.linalg.norm(k_e))))

    sequence: List[Direction] = []
    last_norm = 0.0
    n = 2
    while len(sequence) < depth:
        candidate = primitive_direction(n * scale * k_e - k_eta)
        norm = float(np.linalg.norm(candidate.k))
        if norm > last_norm:
            sequence.append(candidate)
            last_norm = norm
        n *= 2
    thetas = tuple(
        math.acos(min(1.0, float(en.vector @ e.vector))) for en in sequence
    )
    logging.info(
        "Approach to %s along %s: %s",
        e.entry(),
        eta.tolist(),
        [en.entry() for en in sequence],
    )
    return ApproachSpec(
        e=e,
        eta=tuple(eta.tolist()),
        depth=depth,
        sequence=tuple(sequence),
        thetas=thetas,
    )


def rational_approximants(
    direction: Direction, depth: int, start: int = 4
) -> ApproachSpec:
    """Return rational directions k_j = round(S_j·e/|e|_∞), S_j = start·2^j

    Only approximants with growing |k_j| are kept.
    """
    e = direction.vector
    e_scaled = e / np.max(np.abs(e))
    sequence: List[Direction] = []
    last_norm = 0.0
    scale = start
    while len(sequence) < depth:
        k = np.rint(scale * e_scaled).astype(int)
        if np.any(k):
            candidate = primitive_direction(k)
            norm = float(np.linalg.norm(candidate.k))
            if norm > last_norm:
                sequence.append(candidate)
                last_norm = norm
        scale *= 2
    thetas = tuple(math.acos(min(1.0, abs(float(en.vector @ e)))) for en in sequence)
    return ApproachSpec(
        e=direction, eta=None, depth=depth, sequence=tuple(sequence), thetas=thetas
    )


def slice_average(
    f: Callable[[np.ndarray], np.ndarray], e: Direction, s: float, N: int
) -> float:
    """Average of `f` over the slice {<y,e> = s} by the rectangle rule, N^(d-1) nodes"""
    if N < 8:
        raise ValueError("slice quadrature needs N >= 8")
    chart = slice_lattice_basis(e).with_offset(s)
    return float(np.mean(f(chart.points(N))))
