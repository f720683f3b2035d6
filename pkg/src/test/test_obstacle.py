"""Tests for obstacle"""

# src/test/test_obstacle.py

import math

import numpy as np
import pytest

from src.coeffs import builtin_field, project_A
from src.lattice import approach_sequence, primitive_direction
from src.measures import effective_tensors
from src.obstacle import _colors, contact_growth, critical_mu, solve_obstacle
from src.utils.errors import NotConverged

TANGENT = np.diag([1.0, 0.0])
ORIGIN = np.zeros(2)


@pytest.fixture
def constant_op():
    return project_A(builtin_field("constant", {"dim": 2}), primitive_direction([0, 1]))


@pytest.fixture
def harmonic_op():
    field = builtin_field("isotropic-trig", {"base": 2.0, "modes": [[[1, 0], 1.0]]})
    return project_A(field, primitive_direction([0, 1]))


def test_subsolution_full_contact(constant_op):
    """A positive drive tr(bX) + μm keeps the subsolution on its obstacle."""
    solution = solve_obstacle(
        constant_op, "subsolution", TANGENT, 0.0, 4.0, ORIGIN, 1.0
    )

    assert solution.density == 1.0
    assert np.all(solution.u.values == 0.0)
    assert solution.u.shape == (31,)


def test_subsolution_no_contact(constant_op):
    # Act
    solution = solve_obstacle(
        constant_op, "subsolution", TANGENT, -3.0, 4.0, ORIGIN, 1.0
    )

    # Assert
    assert solution.density == 0.0
    assert np.all(solution.u.values < 0.0)
    assert solution.residual < 1e-8


def test_supersolution_mirrors_subsolution(constant_op):
    """The supersolution is nonnegative and touches its obstacle below critical μ."""
    above = solve_obstacle(constant_op, "supersolution", TANGENT, 0.0, 4.0, ORIGIN, 1.0)
    below = solve_obstacle(
        constant_op, "supersolution", TANGENT, -3.0, 4.0, ORIGIN, 1.0
    )

    assert above.density == 0.0
    assert np.all(above.u.values > 0.0)
    assert below.density == 1.0


@pytest.mark.parametrize("method", ["psor", "active-set"])
def test_solvers_agree(harmonic_op, method):
    args = (harmonic_op, "subsolution", TANGENT, -1.8, 4.0, ORIGIN, 1.0)
    solution = solve_obstacle(*args, method=method)
    reference = solve_obstacle(*args, method="active-set")

    assert np.allclose(solution.u.values, reference.u.values, atol=1e-8)
    assert solution.residual < 1e-8


def test_obstacle_rejects_bad_arguments(constant_op):
    with pytest.raises(ValueError):
        solve_obstacle(constant_op, "both", TANGENT, 0.0, 4.0, ORIGIN, 1.0)
    with pytest.raises(ValueError):
        solve_obstacle(constant_op, "subsolution", TANGENT, 0.0, 4.0, ORIGIN, 1.0, M=8)
    with pytest.raises(ValueError):
        solve_obstacle(
            constant_op, "subsolution", TANGENT, 0.0, 4.0, ORIGIN, 1.0, trim=2.5
        )


def test_psor_respects_budget(constant_op):
    with pytest.raises(NotConverged):
        solve_obstacle(
            constant_op, "subsolution", TANGENT, -3.0, 4.0, ORIGIN, 1.0, budget=31
        )


def test_colors_partition_nodes():
    colors = _colors((3, 4))

    nodes = np.sort(np.concatenate(colors))
    assert len(colors) == 4
    assert nodes.tolist() == list(range(12))


def test_critical_value_constant_field(constant_op):
    """Both brackets close around μ̂ = −tr(a X) = −1."""
    # Act
    critical = critical_mu(constant_op, TANGENT, 4.0, 1.0)

    # Assert
    assert critical.mu_hat == pytest.approx(-1.0, abs=2e-2)
    assert critical.sub_bracket[1] - critical.sub_bracket[0] <= 1e-2
    assert critical.solves > 0


def test_critical_value_zero_drive(constant_op):
    critical = critical_mu(constant_op, np.zeros((2, 2)), 4.0, 1.0)

    assert critical.mu_hat == pytest.approx(0.0, abs=2e-2)


def test_critical_value_harmonic_mean(harmonic_op):
    """On a large cube the layered medium has μ̂ = −√3."""
    critical = critical_mu(harmonic_op, TANGENT, 16.0, 1.0, method="active-set")

    assert critical.mu_hat == pytest.approx(-math.sqrt(3.0), abs=2e-2)


def test_density_is_monotone_in_mu(harmonic_op):
    mus = [-3.0, -2.0, -1.5, -1.0, 0.0]

    def density(mu):
        args = (harmonic_op, "subsolution", TANGENT, mu, 8.0, ORIGIN, 1.0)
        return solve_obstacle(*args, method="active-set").density

    densities = [density(mu) for mu in mus]

    assert densities == sorted(densities)
    assert densities[0] == 0.0 and densities[-1] == 1.0


def test_contact_growth(constant_op):
    c_prime, densities = contact_growth(
        constant_op, TANGENT, 4.0, 1.0, -1.0, [0.5, 1.0]
    )

    assert np.allclose(densities, 1.0)
    assert c_prime == pytest.approx(1.0)
    with pytest.raises(ValueError):
        contact_growth(constant_op, TANGENT, 4.0, 1.0, -1.0, [0.0])


def test_three_dimensional_cube():
    """Slices of a three-dimensional field are squares."""
    # Setup
    field = builtin_field("laminar", {"dim": 3, "nu": 0.5})
    op = project_A(field, primitive_direction([0, 0, 1]))
    X = np.diag([1.0, 1.0, 0.0])

    # Act
    origin = np.zeros(3)
    touching = solve_obstacle(
        op, "subsolution", X, 0.0, 2.0, origin, 0.5, method="active-set"
    )
    free = solve_obstacle(
        op, "subsolution", X, -5.0, 2.0, origin, 0.5, method="active-set"
    )

    # Assert
    assert touching.u.shape == (31, 31)
    assert touching.density == 1.0
    assert free.density == 0.0


def test_critical_value_along_approach_stays_above_limit():
    """Approximants of e = (1, 0) cross the layers: μ̂ nears −√3, above −F̄(e) = −2."""
    # Setup
    field = builtin_field("isotropic-trig", {"base": 2.0, "modes": [[[1, 0], 1.0]]})
    e = primitive_direction([1, 0])
    approach = approach_sequence(e, [0.0, 1.0], 1)
    en = approach.sequence[0]
    tangent = np.array([-en.e[1], en.e[0]])

    # Act
    X = np.outer(tangent, tangent)
    critical = critical_mu(project_A(field, en), X, 16.0, 1.0, method="active-set")
    limit = effective_tensors(field, e, 16, 16)

    # Assert
    assert en.k == (2, -1)
    assert limit.a_bar[1, 1] == pytest.approx(2.0, abs=1e-8)
    assert critical.mu_hat == pytest.approx(-math.sqrt(3.0), abs=5e-2)
    assert critical.mu_hat > -limit.a_bar[1, 1] + 0.2
