"""Tests for lattice"""

# src/test/test_lattice.py

import math

import numpy as np
import pytest

from src.lattice import (
    approach_sequence,
    dual_vector,
    irrational_direction,
    parse_direction,
    primitive_direction,
    rational_approximants,
    slice_average,
    slice_lattice_basis,
)
from src.utils.errors import ZeroVector


def test_primitive_direction_reduces_gcd():
    """Integer vectors are reduced to primitive form and normalized."""
    e = primitive_direction([2, 4])

    assert e.k == (1, 2)
    assert np.allclose(e.vector, np.array([1, 2]) / math.sqrt(5))
    assert e.period == pytest.approx(1 / math.sqrt(5))


def test_primitive_direction_rejects_zero():
    with pytest.raises(ZeroVector):
        primitive_direction([0, 0, 0])


def test_parse_direction_entries():
    """Both config forms parse, and entry() writes them back."""
    rational = parse_direction("k=[1, -2, 3]")
    irrational = parse_direction(" v=[1, 1.618033988749895] ")

    assert rational.k == (1, -2, 3)
    assert rational.entry() == "k=[1,-2,3]"
    assert not irrational.is_rational
    assert np.linalg.norm(irrational.vector) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        parse_direction("q=[1,2]")


@pytest.mark.parametrize(
    "k", [(0, 1), (1, 2), (3, -5), (0, 0, 1), (1, 2, 2), (2, 3, 5)]
)
def test_slice_basis_is_unimodular_completion(k):
    """The slice basis spans k^⊥ ∩ Z^d and completes the dual vector unimodularly."""
    # Setup
    e = primitive_direction(k)

    # Act
    chart = slice_lattice_basis(e)
    l = dual_vector(e)

    # Assert
    assert np.all(chart.basis.T @ np.asarray(k) == 0)
    assert l @ np.asarray(k) == 1
    assert abs(round(np.linalg.det(np.column_stack([l, chart.basis])))) == 1
    assert np.allclose(chart.frame.T @ chart.frame, np.eye(len(k) - 1))
    assert np.allclose(chart.frame.T @ e.vector, 0.0)


def test_slice_basis_prefers_coordinate_vectors():
    chart = slice_lattice_basis(primitive_direction([0, 0, 1]))

    assert chart.basis.T.tolist() == [[1, 0, 0], [0, 1, 0]]


def test_chart_points_lie_on_slice():
    """Every slice grid point satisfies <y, e> = s modulo the period."""
    e = primitive_direction([1, 2])
    chart = slice_lattice_basis(e).with_offset(0.3)

    points = chart.points(16)
    offsets = np.mod(points @ e.vector, e.period)

    assert np.all((points >= 0) & (points < 1))
    assert np.allclose(offsets, 0.3 % e.period)


def test_chart_with_origin_keeps_anchor():
    e = primitive_direction([0, 1])
    chart = slice_lattice_basis(e).with_origin([0.25, 0.5])

    assert np.allclose(chart.points(16)[0], [0.25, 0.5])
    assert chart.offset == pytest.approx(0.5)


def test_approach_sequence_laminar_side():
    """Approaching (0,0,1) along -eta0 gives k_n = (-1, 0, 2^n), angles shrinking."""
    e = primitive_direction([0, 0, 1])

    approach = approach_sequence(e, [1.0, 0.0, 0.0], 4)

    expected = [(-1, 0, 2), (-1, 0, 4), (-1, 0, 8), (-1, 0, 16)]
    assert [en.k for en in approach.sequence] == expected
    assert all(a > b for a, b in zip(approach.thetas, approach.thetas[1:]))


def test_approach_sequence_rejects_bad_eta():
    e = primitive_direction([0, 1])

    with pytest.raises(ValueError):
        approach_sequence(e, [0.0, 1.0], 3)
    with pytest.raises(ValueError):
        approach_sequence(e, [2.0, 0.0], 3)


def test_rational_approximants_of_golden_direction():
    """Approximants of an irrational direction get longer and closer."""
    golden = irrational_direction([1.0, (1 + math.sqrt(5)) / 2])

    approach = rational_approximants(golden, 4)
    norms = [np.linalg.norm(en.k) for en in approach.sequence]

    assert approach.eta is None
    assert all(a < b for a, b in zip(norms, norms[1:]))
    assert approach.thetas[-1] < approach.thetas[0]


@pytest.mark.parametrize("k", [(1, 3), (2, 5), (3, 7), (1, 4)])
def test_slice_average_equidistributes(k):
    """cos 2π(y1 + 2y2) averages to zero when k is not parallel to (1, 2)."""

    def f(y):
        return np.cos(2 * math.pi * (y[:, 0] + 2 * y[:, 1]))

    average = slice_average(f, primitive_direction(k), 0.0, 16)
    assert average == pytest.approx(0.0, abs=1e-12)


def test_slice_average_resonant_direction():
    def f(y):
        return np.cos(2 * math.pi * (y[:, 0] + 2 * y[:, 1]))

    assert slice_average(f, primitive_direction([1, 2]), 0.0, 16) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        slice_average(f, primitive_direction([1, 2]), 0.0, 4)
