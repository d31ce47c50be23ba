"""
tests/unit/core/test_reference_flow.py

Unit tests for the reference-flow objects: parabolic paths, frame
transport, heat flow and the gradient bound.

Tests cover:
- Observables and their closed-form heat flows
- Monte Carlo heat flow against the closed forms on both backgrounds
- The |sin| series against direct quadrature
- Orthonormality defect and polar re-orthonormalization
- Parabolic transport on the flat torus and the shrinking sphere, across
  chart changes
- Gradient bound rows
- Domain and contract errors
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.backgrounds import build_background
from src.core.errors import ContractError, DomainError
from src.core.rng import RngSpec
from src.core.reference_flow import (
    AmbientHarmonic,
    ConstantObservable,
    FourierMode,
    gradient_bound_check,
    gradient_norm,
    heat_expectation,
    orthogonality_defect,
    parabolic_base_paths,
    parabolic_start,
    parabolic_transport,
    polar_reorthonormalize,
    torus_abs_sine_expectation,
    volume_invariant,
)


def _quadrature_abs_sine(y, duration, kappa=1.0):
    z = np.linspace(-9.0, 9.0, 400001)
    weights = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    values = np.abs(np.sin(y + kappa * math.sqrt(2 * duration) * z))
    return float(np.sum(values * weights) * (z[1] - z[0]))


class TestObservables:
    """Test observable values, gradients and closed forms."""

    @pytest.mark.unit
    def test_fourier_mode(self, torus_config):
        background = build_background(torus_config)
        mode = FourierMode([1, 0], amplitude=2.0, phase=0.1)
        x = np.array([0.7, 0.3])
        assert float(mode(background, x, 0)) == pytest.approx(2.0 * math.cos(0.8))
        assert_allclose(mode.gradient(background, x, 0), [-2.0 * math.sin(0.8), 0.0])
        assert mode.closed_form(background, 0.2, 0.5, x, 0) == pytest.approx(math.exp(-0.3) * 2.0 * math.cos(0.8))

    @pytest.mark.unit
    def test_ambient_harmonic(self, sphere_config):
        background = build_background(sphere_config)
        y = AmbientHarmonic([0.0, 0.0, 1.0])
        x = np.array([0.25, 0.25])
        assert float(y(background, x, 0)) == pytest.approx(0.875 / 1.125)
        # c(0.4) / c(0.2) = 0.2 / 0.6, exponent 1 for n = 2
        assert float(y.closed_form(background, 0.2, 0.4, x, 0)) == pytest.approx(0.875 / 1.125 / 3.0)

    @pytest.mark.unit
    def test_ambient_harmonic_gradient_matches_differences(self, sphere_config):
        background = build_background(sphere_config)
        y = AmbientHarmonic([0.3, -0.5, 0.8])
        x, eps = np.array([0.2, -0.4]), 1e-6
        fd = [(float(y(background, x + eps * e, 0)) - float(y(background, x - eps * e, 0))) / (2 * eps)
              for e in np.eye(2)]
        assert_allclose(y.gradient(background, x, 0), fd, atol=1e-8)

    @pytest.mark.unit
    def test_gradient_norm_uses_metric(self, sphere_config):
        background = build_background(sphere_config)
        y = AmbientHarmonic([1.0, 0.0, 0.0])
        x, tau = np.array([0.0, 0.0]), 0.3
        # at the chart centre g = 4c I and dY/dx1 = 2
        expected = 2.0 / math.sqrt(4.0 * float(background.scale(tau)))
        assert float(gradient_norm(background, y, x, 0, tau)) == pytest.approx(expected)

    @pytest.mark.unit
    def test_constant(self, any_config):
        background = build_background(any_config)
        c = ConstantObservable(3.0)
        x = np.zeros((4, 2))
        assert_allclose(c(background, x, np.zeros(4)), 3.0)
        assert_allclose(c.gradient(background, x, np.zeros(4)), 0.0)

    @pytest.mark.unit
    def test_background_mismatch(self, sphere_config, torus_config):
        with pytest.raises(DomainError):
            FourierMode([1, 0])(build_background(sphere_config), np.zeros(2), 0)
        with pytest.raises(DomainError):
            AmbientHarmonic([0, 0, 1])(build_background(torus_config), np.zeros(2), 0)
        with pytest.raises(ContractError):
            FourierMode([1, 0, 0])(build_background(torus_config), np.zeros(2), 0)


class TestAbsSineSeries:
    """Test E|sin(y + kappa sqrt(2d) Z)|."""

    @pytest.mark.unit
    @pytest.mark.parametrize("y,duration", [(0.3, 0.1), (1.2, 0.05), (2.5, 0.4)])
    def test_against_quadrature(self, y, duration):
        assert float(torus_abs_sine_expectation(y, duration)) == pytest.approx(
            _quadrature_abs_sine(y, duration), abs=1e-6)

    @pytest.mark.unit
    def test_long_time_limit(self):
        assert_allclose(torus_abs_sine_expectation(np.array([0.0, 0.4, 1.5]), 5.0), 2.0 / math.pi, atol=1e-8)

    @pytest.mark.unit
    def test_dominates_decayed_sine(self):
        y = np.linspace(0.0, math.pi, 7)
        assert np.all(torus_abs_sine_expectation(y, 0.2) >= math.exp(-0.2) * np.abs(np.sin(y)) - 1e-12)


class TestParabolicPaths:
    """Test parabolic path construction."""

    @pytest.mark.unit
    def test_default_start(self, torus_config):
        start = parabolic_start(torus_config, [0.1, 0.2])
        assert start.tau == pytest.approx(torus_config.delta)
        assert start.chart_id == "torus"

    @pytest.mark.unit
    def test_clock_exact(self, sphere_config, serial_options):
        start = parabolic_start(sphere_config, [0.25, 0.25], t_start=0.3)
        ensemble = parabolic_base_paths(sphere_config, start, 0.1, 0.01, 5, RngSpec(3), options=serial_options)
        assert_allclose(ensemble.tau, 0.12 + ensemble.times[None, :], atol=1e-15)
        assert ensemble.meta["kind"] == "parabolic"

    @pytest.mark.unit
    def test_horizon_past_window(self, torus_config, serial_options):
        start = parabolic_start(torus_config, [0.0, 0.0], t_start=0.5)
        with pytest.raises(DomainError):
            parabolic_base_paths(torus_config, start, 0.6, 0.01, 2, RngSpec(0), options=serial_options)


class TestHeatFlow:
    """Monte Carlo heat flow against the closed forms."""

    @pytest.mark.unit
    def test_torus_fourier(self, torus_config, serial_options):
        mode = FourierMode([1, 0])
        exact = heat_expectation(torus_config, mode, 0.8, 1.0, [0.7, 0.7])
        assert exact == pytest.approx(math.exp(-0.2) * math.cos(0.7))
        est = heat_expectation(torus_config, mode, 0.8, 1.0, [0.7, 0.7], method="monte_carlo",
                               h=0.01, n_paths=1000, rng=RngSpec(11), options=serial_options)
        assert abs(est.mean - exact) <= 4 * est.stderr

    @pytest.mark.unit
    def test_sphere_harmonic(self, sphere_config, serial_options):
        harmonic = AmbientHarmonic([0.0, 0.0, 1.0])
        exact = heat_expectation(sphere_config, harmonic, 0.2, 0.4, [0.25, 0.25])
        assert exact == pytest.approx(0.259259, abs=1e-5)
        est = heat_expectation(sphere_config, harmonic, 0.2, 0.4, [0.25, 0.25], method="monte_carlo",
                               h=2e-3, n_paths=1000, rng=RngSpec(12), options=serial_options)
        assert abs(est.mean - exact) <= 4 * est.stderr + 0.02

    @pytest.mark.unit
    def test_constant_is_preserved(self, sphere_config):
        assert heat_expectation(sphere_config, ConstantObservable(2.5), 0.1, 0.3, [0.1, 0.1]) == 2.5

    @pytest.mark.unit
    def test_time_order(self, torus_config):
        with pytest.raises(DomainError):
            heat_expectation(torus_config, FourierMode([1, 0]), 0.5, 0.4, [0.0, 0.0])

    @pytest.mark.unit
    def test_unknown_method(self, torus_config):
        with pytest.raises(ContractError):
            heat_expectation(torus_config, FourierMode([1, 0]), 0.2, 0.4, [0.0, 0.0], method="exact")


class TestFrames:
    """Test orthonormal frames along parabolic paths."""

    @pytest.mark.unit
    def test_defect_of_orthonormal_frame(self):
        g = np.diag([4.0, 9.0])
        assert float(orthogonality_defect(np.diag([0.5, 1.0 / 3.0]), g)) == pytest.approx(0.0, abs=1e-15)
        assert float(orthogonality_defect(np.eye(2), np.eye(2) * 4.0)) == pytest.approx(3.0 * math.sqrt(2.0))

    @pytest.mark.unit
    def test_polar_projection(self, numpy_rng):
        g = np.array([[2.0, 0.3], [0.3, 1.0]])
        u = numpy_rng.normal(size=(5, 2, 2)) + 2.0 * np.eye(2)
        projected = polar_reorthonormalize(u, g)
        assert np.max(orthogonality_defect(projected, g)) < 1e-12
        assert_allclose(polar_reorthonormalize(projected, g), projected, atol=1e-12)

    @pytest.mark.unit
    def test_torus_transport_is_trivial(self, torus_config, serial_options):
        start = parabolic_start(torus_config, [0.7, 0.7], t_start=0.5)
        ensemble = parabolic_base_paths(torus_config, start, 0.1, 0.01, 10, RngSpec(5), options=serial_options)
        u0 = np.array([[0.6, -0.8], [0.8, 0.6]])
        path = parabolic_transport(torus_config, ensemble, u0)
        assert_allclose(path.frames, np.broadcast_to(u0, path.frames.shape), atol=1e-14)
        assert np.max(path.defect) < 1e-12
        assert_allclose(path.clock, torus_config.calT - ensemble.tau)
        assert_allclose(volume_invariant(torus_config, path), np.linalg.det(u0))

    @pytest.mark.unit
    def test_sphere_transport_stays_nearly_orthonormal(self, sphere_config, serial_options):
        x = np.array([0.25, 0.25])
        start = parabolic_start(sphere_config, x, t_start=0.3)
        ensemble = parabolic_base_paths(sphere_config, start, 0.1, 2e-3, 100, RngSpec(6), options=serial_options)
        g0 = build_background(sphere_config).metric(x, start.tau)
        u0 = np.eye(2) / math.sqrt(g0[0, 0])
        plain = parabolic_transport(sphere_config, ensemble, u0, scheme="heun")
        assert float(np.max(plain.defect[:, 0])) < 1e-12
        assert float(np.max(plain.defect)) < 0.05
        projected = parabolic_transport(sphere_config, ensemble, u0, scheme="heun", reorthonormalize=True)
        assert float(np.max(projected.defect)) < 1e-10
        assert_allclose(volume_invariant(sphere_config, projected), 1.0, atol=1e-9)
        path = parabolic_transport(sphere_config, ensemble, u0)
        assert float(np.max(path.defect)) < 1e-10

    @pytest.mark.unit
    def test_sphere_transport_across_chart_changes(self, sphere_config, serial_options):
        x = np.array([0.25, 0.25])
        start = parabolic_start(sphere_config, x)
        ensemble = parabolic_base_paths(sphere_config, start, 0.3, 1e-3, 40, RngSpec(8), options=serial_options)
        switched = np.any(ensemble.chart != ensemble.chart[:, :1], axis=1)
        assert np.any(switched)
        g0 = build_background(sphere_config).metric(x, start.tau)
        u0 = np.eye(2) / math.sqrt(g0[0, 0])
        path = parabolic_transport(sphere_config, ensemble, u0)
        assert float(np.max(path.defect)) <= 1e-4
        volume = volume_invariant(sphere_config, path)
        assert_allclose(volume, 1.0, atol=1e-4)
        assert_allclose(volume[switched], 1.0, atol=1e-4)

    @pytest.mark.unit
    def test_sphere_orientation_flips_with_chart(self, sphere_config, torus_config):
        sphere = build_background(sphere_config)
        assert_allclose(sphere.chart_orientation(np.array([0, 1, 1, 0], dtype=np.int8)), [1.0, -1.0, -1.0, 1.0])
        flip = sphere.transition_jacobian(np.array([0.6, -0.9]))
        assert np.linalg.det(flip) < 0.0
        assert_allclose(build_background(torus_config).chart_orientation(np.zeros(3, dtype=np.int8)), 1.0)

    @pytest.mark.unit
    def test_frame_shape(self, torus_config, serial_options):
        start = parabolic_start(torus_config, [0.0, 0.0], t_start=0.5)
        ensemble = parabolic_base_paths(torus_config, start, 0.02, 0.01, 2, RngSpec(0), options=serial_options)
        with pytest.raises(ContractError):
            parabolic_transport(torus_config, ensemble, np.eye(3))


class TestGradientBound:
    """Test gradient bound rows."""

    @pytest.mark.unit
    def test_torus_fourier_rows_hold(self, torus_config):
        points = [[0.3, 0.4], [1.0, 2.0], [2.9, 0.0]]
        rows = gradient_bound_check(torus_config, FourierMode([1, 1]), points, 0.3, 0.8)
        assert [r.point for r in rows] == [0, 1, 2]
        for row in rows:
            assert row.holds
            assert row.lhs <= row.rhs + 1e-12
            assert row.lhs_stderr == 0.0

    @pytest.mark.unit
    def test_torus_fourier_lhs_closed_form(self, torus_config):
        row = gradient_bound_check(torus_config, FourierMode([1, 0]), [[0.5, 0.0]], 0.6, 0.8)[0]
        assert row.lhs == pytest.approx(math.exp(-0.2) * math.sin(0.5))
        assert row.rhs == pytest.approx(float(torus_abs_sine_expectation(0.5, 0.2)))

    @pytest.mark.unit
    def test_constant_on_sphere_by_monte_carlo(self, sphere_config, serial_options):
        rows = gradient_bound_check(sphere_config, ConstantObservable(1.0), [[0.2, 0.1]], 0.3, 0.4,
                                    h=0.01, n_paths=50, rng=RngSpec(2), options=serial_options)
        assert rows[0].lhs == 0.0
        assert rows[0].rhs == 0.0
        assert rows[0].holds
