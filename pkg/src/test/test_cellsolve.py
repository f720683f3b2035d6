"""Tests for cellsolve"""

# src/test/test_cellsolve.py

import math

import numpy as np
import pytest
import scipy.sparse as sp

from src.cellsolve import (
    diophantine_check,
    extract_Fperp,
    fourier_corrector,
    solve_oscillating_cell,
    solve_penalized,
    solve_slice_cell,
    solve_sparse,
)
from src.coeffs import builtin_field, project_A
from src.lattice import irrational_direction, primitive_direction, slice_lattice_basis
from src.utils.errors import IllConditioned, NonConvergent, SmallDivisor, SolverDiverged

GOLDEN = (1 + math.sqrt(5)) / 2
TANGENT = np.diag([1.0, 0.0])


@pytest.fixture
def harmonic_op():
    """a = (2 + cos 2πy1) Id projected along e = (0, 1)"""
    field = builtin_field("isotropic-trig", {"base": 2.0, "modes": [[[1, 0], 1.0]]})
    return project_A(field, primitive_direction([0, 1]))


def test_penalized_constant_drive():
    """With constant coefficients δV solves δV = 1 exactly."""
    # Setup
    field = builtin_field("constant", {"dim": 2})
    op = project_A(field, primitive_direction([1, 1]))
    X = np.eye(2) - np.outer([1, 1], [1, 1]) / 2

    # Act
    corrector = solve_penalized(op, X, 0.1, 16)

    # Assert
    assert np.allclose(0.1 * corrector.V.values, 1.0, atol=1e-8)
    assert corrector.V.domain == "torus"


def test_penalized_zero_drive(harmonic_op):
    corrector = solve_penalized(harmonic_op, np.zeros((2, 2)), 0.1, 16)

    assert np.all(corrector.V.values == 0.0)
    assert corrector.residual_inf == 0.0


def test_penalized_respects_maximum_principle(harmonic_op):
    """δ|V| stays below the largest drive tr(bX)/m = 3."""
    corrector = solve_penalized(harmonic_op, TANGENT, 0.05, 32)

    assert 0.05 * np.abs(corrector.V.values).max() <= 3.0 + 1e-8


def test_penalized_rejects_bad_arguments(harmonic_op):
    with pytest.raises(ValueError):
        solve_penalized(harmonic_op, TANGENT, 0.0, 32)
    with pytest.raises(ValueError):
        solve_penalized(harmonic_op, TANGENT, 0.1, 8)


def test_extract_Fperp_harmonic_mean(harmonic_op):
    """The oscillating ergodic constant of a layered medium is its harmonic mean."""
    # Act
    profile = extract_Fperp(harmonic_op, TANGENT, (0.2, 0.1, 0.05), N=32)

    # Assert
    assert np.allclose(profile.values, math.sqrt(3.0), atol=1e-3)
    assert profile.error <= 1e-3
    assert profile.s_grid.shape == (32,)


def test_extract_Fperp_follows_mobility():
    """Mobility varying across the slices gives the profile 1/m(s)."""
    # Setup
    field = builtin_field("constant", {"dim": 2, "m0": 1.0, "m_modes": [[[0, 1], 0.5]]})
    op = project_A(field, primitive_direction([0, 1]))

    # Act
    profile = extract_Fperp(op, TANGENT, N=16)

    # Assert
    s = np.arange(16) / 16
    expected = 1.0 / (1.0 + 0.5 * np.cos(2 * math.pi * s))
    assert np.allclose(profile.values, expected, atol=1e-8)


def test_extract_Fperp_reports_spread(harmonic_op):
    with pytest.raises(NonConvergent):
        extract_Fperp(harmonic_op, TANGENT, N=16, tol=1e-12)
    with pytest.raises(ValueError):
        extract_Fperp(harmonic_op, TANGENT, (0.1,), N=16, order=1)


def test_extract_Fperp_accepts_precomputed_correctors(harmonic_op):
    deltas = (0.2, 0.1, 0.05)
    correctors = [solve_penalized(harmonic_op, TANGENT, delta, 16) for delta in deltas]

    reused = extract_Fperp(harmonic_op, TANGENT, deltas, N=16, correctors=correctors)
    fresh = extract_Fperp(harmonic_op, TANGENT, deltas, N=16)

    assert np.allclose(reused.values, fresh.values)


def test_slice_cell_two_dimensions(harmonic_op):
    """−a V'' = a sin 2πy1 has the solution sin(2πy1)/4π² with V(0) = 0."""
    # Setup
    chart = slice_lattice_basis(harmonic_op.direction)

    def f(y):
        return (2.0 + np.cos(2 * math.pi * y[:, 0])) * np.sin(2 * math.pi * y[:, 0])

    # Act
    solution, f_perp = solve_slice_cell(harmonic_op, chart, f, 64)

    # Assert
    y1 = solution.chart.points(64)[:, 0]
    assert solution.domain == "slice"
    assert f_perp == pytest.approx(0.0, abs=1e-12)
    expected = np.sin(2 * math.pi * y1) / (4 * math.pi**2)
    assert np.allclose(solution.values, expected, atol=1e-4)


def test_slice_cell_three_dimensions():
    """On the slice y3 = 1/4 the laminar field is the identity."""
    # Setup
    field = builtin_field("laminar", {"dim": 3, "nu": 0.5})
    op = project_A(field, primitive_direction([0, 0, 1]))
    chart = slice_lattice_basis(op.direction).with_offset(0.25)

    def f(y):
        return np.sin(2 * math.pi * y[:, 0])

    # Act
    solution, f_perp = solve_slice_cell(op, chart, f, 32)

    # Assert
    y1 = solution.chart.points(32)[:, 0]
    expected = np.sin(2 * math.pi * y1) / (4 * math.pi**2)
    assert solution.shape == (32, 32)
    assert f_perp == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(solution.values.ravel(), expected, atol=2e-4)


def test_slice_cell_converges_at_second_order():
    """Slice solutions along k = (1, 2) differ fourfold less per grid doubling."""
    # Setup
    field = builtin_field(
        "anisotropic-trig",
        {
            "a0": [2.0, 2.0],
            "terms": [[[1, 0], 0.3, [[1, 0.5], [0.5, 1]]]],
            "m_modes": [[[2, 1], 0.2, 0.1]],
        },
    )
    op = project_A(field, primitive_direction([1, 2]))
    chart = slice_lattice_basis(op.direction).with_offset(0.1)

    def f(y):
        diagonal = 0.5 * np.cos(2 * math.pi * (y[:, 0] + y[:, 1]))
        return np.sin(2 * math.pi * y[:, 0]) + diagonal

    # Act
    solutions = [solve_slice_cell(op, chart, f, M)[0].values for M in (64, 128, 256)]

    # Assert
    coarse = np.abs(solutions[0] - solutions[1][::2]).max()
    fine = np.abs(solutions[1] - solutions[2][::2]).max()
    assert math.log2(coarse / fine) >= 1.8


def test_slice_cell_gauge(harmonic_op):
    """Adding a constant to f shifts f^⊥ and leaves Ṽ unchanged."""
    chart = slice_lattice_basis(harmonic_op.direction)

    def f(y):
        return np.cos(2 * math.pi * y[:, 0])

    base, base_perp = solve_slice_cell(harmonic_op, chart, f, 32)
    shifted, shifted_perp = solve_slice_cell(
        harmonic_op, chart, lambda y: f(y) + 3.0, 32
    )

    assert shifted_perp - base_perp == pytest.approx(3.0)
    assert np.allclose(base.values, shifted.values, atol=1e-10)


def test_oscillating_cell_assembles_slices(harmonic_op):
    # Setup
    def f(y):
        return (2.0 + np.cos(2 * math.pi * y[:, 0])) * np.sin(2 * math.pi * y[:, 0])

    # Act
    V, f_perp = solve_oscillating_cell(harmonic_op, f, 32)

    # Assert
    y1 = np.arange(32) / 32
    expected = np.sin(2 * math.pi * y1) / (4 * math.pi**2)
    assert V.shape == (32, 32)
    assert np.allclose(V.values, expected[:, None], atol=2e-4)
    assert np.allclose(f_perp.values, 0.0, atol=1e-10)


def test_fourier_corrector_golden_direction():
    """The coefficient of mode (1, 0) is −m̂/(4π²|Pk|²)."""
    # Setup
    field = builtin_field("constant", {"dim": 2, "m0": 1.0, "m_modes": [[[1, 0], 0.5]]})
    e = irrational_direction([1.0, GOLDEN])

    # Act
    corrector = fourier_corrector(field, e, 8.0)

    # Assert
    pk2 = GOLDEN**2 / (1 + GOLDEN**2)
    assert corrector.V.values[0, 0] == pytest.approx(-0.5 / (4 * math.pi**2 * pk2))
    assert corrector.residual_inf <= corrector.tolerance
    assert corrector.mean == pytest.approx(0.0, abs=1e-12)


def test_fourier_corrector_uses_direction_dependent_diffusion():
    """With aniso = 1 the diffusion along e is scaled by 1 + Σe⁴."""
    # Setup
    params = {"dim": 2, "m0": 1.0, "m_modes": [[[1, 0], 0.5]]}
    plain = builtin_field("constant", params)
    scaled = builtin_field("constant", {**params, "aniso": 1.0})
    e = irrational_direction([1.0, GOLDEN])

    # Act
    base = fourier_corrector(plain, e, 8.0)
    corrector = fourier_corrector(scaled, e, 8.0)

    # Assert
    factor = 1.0 + float(np.sum(e.vector**4))
    assert corrector.V.values[0, 0] == pytest.approx(base.V.values[0, 0] / factor)
    assert corrector.residual_inf <= corrector.tolerance


def test_fourier_corrector_constant_mobility():
    field = builtin_field("constant", {"dim": 2, "m0": 2.0})

    corrector = fourier_corrector(field, irrational_direction([1.0, GOLDEN]), 4.0)

    assert np.all(corrector.V.values == 0.0)


def test_fourier_corrector_small_divisor():
    field = builtin_field("constant", {"dim": 2, "m0": 1.0, "m_modes": [[[1, 0], 0.5]]})

    with pytest.raises(SmallDivisor):
        fourier_corrector(field, primitive_direction([0, 1]), 2.0)


def test_diophantine_check():
    """The golden direction is badly approximable; (1, 2) is resonant with itself."""
    golden = irrational_direction([1.0, GOLDEN])
    passed, _, value = diophantine_check(golden, 0.4, 1.0, 20)
    resonant = diophantine_check(primitive_direction([1, 2]), 0.4, 1.0, 4)

    assert passed
    assert value == pytest.approx(1 / math.sqrt(5), abs=2e-3)
    assert resonant == (False, (1, 2), pytest.approx(0.0, abs=1e-12))
    with pytest.raises(ValueError):
        diophantine_check([1.0, 0.0], 0.4, 1.0, 0.5)


def test_solve_sparse_falls_back_to_direct(caplog):
    # Setup
    n = 50
    A = sp.diags(
        [np.full(n - 1, -1.0), np.full(n, 4.0), np.full(n - 1, -2.0)], [-1, 0, 1]
    )
    rhs = np.random.default_rng(0).random(n)

    # Act
    x, residual = solve_sparse(A, rhs, maxiter=1)

    # Assert
    assert np.allclose(A @ x, rhs)
    assert residual < 1e-9
    assert "falling back" in caplog.text
    with pytest.raises(SolverDiverged):
        solve_sparse(A, rhs, maxiter=1, fallback=False)


def test_solve_sparse_singular_and_zero():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))

    x, residual = solve_sparse(A, np.zeros(2))

    assert np.all(x == 0.0) and residual == 0.0
    with pytest.raises(IllConditioned):
        solve_sparse(A, np.array([1.0, 2.0]), direct=True)
