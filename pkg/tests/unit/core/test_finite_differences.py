"""
tests/unit/core/test_finite_differences.py

Unit tests for the finite-difference ground truth.

Tests cover:
- Christoffel symbols of known metrics
- Ricci tensor of the round sphere
- Orthonormal frames and the conditioning guard
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.errors import ConditioningError
from src.core.finite_differences import (
    central_gradient,
    checked_inverse,
    christoffel_symbols,
    orthonormal_frame,
    ricci_tensor,
)


def polar_metric(p):
    r = p[0]
    return np.diag([1.0, r * r])


def round_sphere_metric(p):
    """Unit sphere in (theta, phi)."""
    return np.diag([1.0, np.sin(p[0]) ** 2])


class TestCentralGradient:

    @pytest.mark.unit
    def test_quadratic_exact(self):
        fn = lambda p: np.array([p[0] ** 2 + 3 * p[1], p[0] * p[1]])
        grad = central_gradient(fn, np.array([1.0, 2.0]), 1e-3)
        assert_allclose(grad, [[2.0, 2.0], [3.0, 1.0]], atol=1e-9)


class TestChristoffels:
    """Test Christoffel symbols from metric differences."""

    @pytest.mark.unit
    def test_flat_metric(self):
        gamma = christoffel_symbols(lambda p: np.eye(3), np.zeros(3), 1e-4)
        assert_allclose(gamma, 0.0)

    @pytest.mark.unit
    def test_polar_coordinates(self):
        r = 1.7
        gamma = christoffel_symbols(polar_metric, np.array([r, 0.3]), 1e-4)
        assert gamma[0, 1, 1] == pytest.approx(-r, abs=1e-7)
        assert gamma[1, 0, 1] == pytest.approx(1.0 / r, abs=1e-7)
        assert gamma[1, 1, 0] == pytest.approx(1.0 / r, abs=1e-7)
        assert gamma[0, 0, 0] == pytest.approx(0.0, abs=1e-9)


class TestRicci:
    """Test the nested-difference Ricci tensor."""

    @pytest.mark.unit
    def test_unit_sphere_is_einstein(self):
        p = np.array([1.1, 0.4])
        ric = ricci_tensor(round_sphere_metric, p, 1e-4, 1e-3)
        assert_allclose(ric, round_sphere_metric(p), atol=1e-5)

    @pytest.mark.unit
    def test_polar_plane_is_flat(self):
        ric = ricci_tensor(polar_metric, np.array([2.0, 0.0]), 1e-4, 1e-3)
        assert_allclose(ric, 0.0, atol=1e-5)


class TestFrames:
    """Test orthonormal frames and inverses."""

    @pytest.mark.unit
    def test_frame_is_orthonormal_and_upper_triangular(self):
        g = np.array([[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 0.8]])
        frame = orthonormal_frame(g)
        assert_allclose(frame.T @ g @ frame, np.eye(3), atol=1e-12)
        assert_allclose(np.tril(frame, -1), 0.0, atol=1e-14)
        assert np.all(np.diag(frame) > 0)

    @pytest.mark.unit
    def test_indefinite_rejected(self):
        with pytest.raises(ConditioningError):
            orthonormal_frame(np.diag([1.0, -1.0]))

    @pytest.mark.unit
    def test_singular_rejected(self):
        with pytest.raises(ConditioningError):
            checked_inverse(np.array([[1.0, 1.0], [1.0, 1.0]]))

    @pytest.mark.unit
    def test_inverse(self):
        g = np.diag([2.0, 4.0])
        assert_allclose(checked_inverse(g), np.diag([0.5, 0.25]))
