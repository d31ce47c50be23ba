"""
tests/unit/core/test_backgrounds.py

Unit tests for the closed-form backgrounds.

Tests cover:
- Flat torus metric, scalar curvature and wrapping
- Shrinking sphere scale, scalar curvature and jet against finite differences
- Ricci-flow residual and its sign-flipped control
- Chart maps between stereographic charts and the ambient form
- Domain checks on the tau window
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.backgrounds import (
    NORTH,
    SOUTH,
    ChartPoint,
    FlatTorusBackground,
    ShrinkingSphereBackground,
    build_background,
    chart_map,
    christoffel_fd,
    metric_jet,
    ricci_flow_residual,
    sample_chart_points,
)
from src.core.errors import ChartError, DomainError
from src.core.finite_differences import ricci_tensor
from src.schemas.flow_models import FlowConfig


class TestFlatTorus:
    """Test the static flat torus."""

    @pytest.mark.unit
    def test_factory(self, torus_config):
        assert isinstance(build_background(torus_config), FlatTorusBackground)

    @pytest.mark.unit
    def test_metric_is_identity_for_batches(self, torus_config):
        background = build_background(torus_config)
        x = np.random.default_rng(0).uniform(0, 6, size=(5, 2))
        g = background.metric(x, np.full(5, 0.5))
        assert g.shape == (5, 2, 2)
        assert_allclose(g, np.broadcast_to(np.eye(2), (5, 2, 2)))

    @pytest.mark.unit
    def test_jet_vanishes(self, torus_config):
        jet = build_background(torus_config).jet(np.array([1.0, 2.0]), 0.3)
        assert np.all(jet.gamma == 0.0)
        assert np.all(jet.ric == 0.0)
        assert float(jet.scal) == 0.0

    @pytest.mark.unit
    def test_periodic_difference(self, torus_config):
        background = build_background(torus_config)
        L = background.L
        d = background.periodic_difference(np.array([0.1, L - 0.1]), np.array([L - 0.1, 0.1]))
        assert_allclose(d, [0.2, -0.2], atol=1e-12)

    @pytest.mark.unit
    def test_chart_map_wraps(self, torus_config):
        p = chart_map(torus_config, ChartPoint([7.0, -1.0], 0.5, "torus"), "torus")
        assert np.all((p.coords >= 0) & (p.coords < 2 * np.pi))

    @pytest.mark.unit
    def test_unknown_chart(self, torus_config):
        with pytest.raises(ChartError):
            chart_map(torus_config, ChartPoint([0.0, 0.0], 0.5, "torus"), "north")


class TestShrinkingSphere:
    """Test the shrinking round sphere."""

    @pytest.mark.unit
    def test_scale_endpoints(self, sphere_config):
        background = build_background(sphere_config)
        assert isinstance(background, ShrinkingSphereBackground)
        # tau = T is forward time delta; tau = delta is forward time T
        assert float(background.scale(sphere_config.T)) == pytest.approx(1.0 - 2 * 0.02)
        assert float(background.scale(sphere_config.delta)) == pytest.approx(1.0 - 2 * 0.4)

    @pytest.mark.unit
    def test_scalar_curvature(self, sphere_config):
        background = build_background(sphere_config)
        tau = 0.3
        c = float(background.scale(tau))
        assert float(background.scalar(np.zeros(2), tau)) == pytest.approx(2.0 / c)

    @pytest.mark.unit
    def test_metric_at_chart_centre(self, sphere_config):
        background = build_background(sphere_config)
        g = background.metric(np.zeros(2), 0.3)
        assert_allclose(g, 4.0 * float(background.scale(0.3)) * np.eye(2))

    @pytest.mark.unit
    def test_jet_ricci_matches_finite_differences(self, sphere_config):
        background = build_background(sphere_config)
        x, tau = np.array([0.3, -0.4]), 0.25
        ric_fd = ricci_tensor(lambda q: background.metric(q, tau), x, 1e-4, 1e-3)
        assert_allclose(background.jet(x, tau).ric, ric_fd, atol=1e-5)

    @pytest.mark.unit
    def test_dgamma_matches_finite_differences(self, sphere_config):
        background = build_background(sphere_config)
        x, tau, h = np.array([0.2, 0.5]), 0.2, 1e-5
        dgamma = background.jet(x, tau).dgamma
        for l in range(2):
            step = np.zeros(2)
            step[l] = h
            fd = (background.jet(x + step, tau).gamma - background.jet(x - step, tau).gamma) / (2 * h)
            assert_allclose(dgamma[l], fd, atol=1e-7)

    @pytest.mark.unit
    def test_christoffel_fd_matches_jet(self, sphere_config):
        p = ChartPoint([0.4, 0.1], 0.3, "north")
        assert_allclose(christoffel_fd(sphere_config, p), metric_jet(sphere_config, p).gamma, atol=1e-6)

    @pytest.mark.unit
    def test_dimension_three(self):
        config = FlowConfig.default_sphere(n=3, T=0.2)
        jet = build_background(config).jet(np.array([0.1, 0.2, 0.3]), 0.1)
        c = float(build_background(config).scale(0.1))
        assert float(jet.scal) == pytest.approx(6.0 / c)


class TestSphereCharts:
    """Test stereographic charts and the ambient representation."""

    @pytest.mark.unit
    def test_north_south_roundtrip(self, sphere_config):
        p = ChartPoint([0.3, -0.7], 0.2, "north")
        q = chart_map(sphere_config, chart_map(sphere_config, p, "south"), "north")
        assert_allclose(q.coords, p.coords, atol=1e-12)

    @pytest.mark.unit
    def test_ambient_is_unit(self, sphere_config):
        a = chart_map(sphere_config, ChartPoint([0.3, -0.7], 0.2, "north"), "ambient")
        assert np.linalg.norm(a.coords) == pytest.approx(1.0)

    @pytest.mark.unit
    def test_charts_agree_on_ambient_point(self, sphere_config):
        background = build_background(sphere_config)
        x = np.array([0.5, 0.2])
        amb = background.to_ambient(x, NORTH)
        y = background.from_ambient(amb, SOUTH)
        assert_allclose(background.to_ambient(y, SOUTH), amb, atol=1e-12)

    @pytest.mark.unit
    def test_metric_is_chart_independent(self, sphere_config):
        """Pull back of the south-chart metric through the transition equals the north metric."""
        background = build_background(sphere_config)
        x = np.array([0.5, 0.2])
        J = background.transition_jacobian(x)
        g_south = background.metric(background.switch_chart(x), 0.3)
        assert_allclose(J.T @ g_south @ J, background.metric(x, 0.3), atol=1e-10)

    @pytest.mark.unit
    def test_pole_rejected(self, sphere_config):
        with pytest.raises(ChartError):
            chart_map(sphere_config, ChartPoint([0.0, 0.0], 0.2, "north"), "south")

    @pytest.mark.unit
    def test_canonical_prefers_upper_hemisphere(self, sphere_config):
        background = build_background(sphere_config)
        q = background.canonical(ChartPoint([0.0, 0.6, 0.8], 0.2, "ambient"))
        assert q.chart_id == "north"
        assert_allclose(background.to_ambient(q.coords, NORTH), [0.0, 0.6, 0.8], atol=1e-12)


class TestRicciFlowResidual:
    """Test the flow equation check and its control."""

    @pytest.mark.unit
    def test_residual_small(self, any_config):
        samples = sample_chart_points(any_config, 20, seed=1)
        assert ricci_flow_residual(any_config, samples) <= 1e-6

    @pytest.mark.unit
    def test_sign_flip_detected_on_sphere(self, sphere_config):
        samples = sample_chart_points(sphere_config, 20, seed=1)
        assert ricci_flow_residual(sphere_config, samples, ricci_sign=-1.0) > 1e-2

    @pytest.mark.unit
    def test_samples_inside_window(self, any_config):
        for p in sample_chart_points(any_config, 10, seed=3):
            assert any_config.delta < float(p.tau) < any_config.T


class TestDomain:
    """Test tau window checks."""

    @pytest.mark.unit
    @pytest.mark.parametrize("tau", [0.0, 0.01, 0.41, np.nan])
    def test_jet_outside_window(self, sphere_config, tau):
        with pytest.raises(DomainError):
            build_background(sphere_config).jet(np.zeros(2), tau)

    @pytest.mark.unit
    def test_window_endpoints_accepted(self, sphere_config):
        background = build_background(sphere_config)
        background.jet(np.zeros(2), sphere_config.delta)
        background.jet(np.zeros(2), sphere_config.T)
