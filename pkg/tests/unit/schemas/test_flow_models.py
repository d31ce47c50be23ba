"""
tests/unit/schemas/test_flow_models.py

Unit tests for the background and window models.

Tests cover:
- Window constraint delta < T
- Sphere existence constraint T + delta < c0/(2(n-1))
- Discriminated background union
- Default sphere / torus factories
"""

import math

import pytest
from pydantic import ValidationError

from src.schemas.flow_models import FlatTorus, FlowConfig, ShrinkingSphere


class TestFlowConfig:
    """Test FlowConfig validation."""

    @pytest.mark.unit
    def test_calT_is_T_plus_delta(self):
        config = FlowConfig.default_sphere()
        assert config.calT == pytest.approx(0.42)

    @pytest.mark.unit
    def test_delta_must_be_below_T(self):
        with pytest.raises(ValidationError, match="delta < T"):
            FlowConfig.default_torus(T=0.4, delta=0.6)

    @pytest.mark.unit
    def test_delta_equal_T_rejected(self):
        with pytest.raises(ValidationError):
            FlowConfig.default_torus(T=0.5, delta=0.5)

    @pytest.mark.unit
    def test_sphere_must_exist_on_window(self):
        """c0 = 1, n = 2 gives extinction at t = 0.5."""
        with pytest.raises(ValidationError, match="c0/"):
            FlowConfig.default_sphere(T=0.49, delta=0.02)

    @pytest.mark.unit
    def test_sphere_needs_two_dimensions(self):
        with pytest.raises(ValidationError, match="n >= 2"):
            FlowConfig.default_sphere(n=1)

    @pytest.mark.unit
    def test_torus_allows_one_dimension(self):
        config = FlowConfig.default_torus(n=1)
        assert config.n == 1

    @pytest.mark.unit
    def test_larger_c0_extends_window(self):
        config = FlowConfig(n=2, T=0.9, delta=0.05, background=ShrinkingSphere(c0=2.0))
        assert config.calT < 1.0

    @pytest.mark.unit
    def test_nonpositive_values_rejected(self):
        with pytest.raises(ValidationError):
            FlowConfig.default_torus(T=-1.0)
        with pytest.raises(ValidationError):
            FlatTorus(L=0.0)


class TestBackgroundUnion:
    """Test the discriminated background field."""

    @pytest.mark.unit
    def test_labels(self, sphere_config, torus_config):
        assert sphere_config.is_sphere and sphere_config.label == "sphere"
        assert not torus_config.is_sphere and torus_config.label == "torus"

    @pytest.mark.unit
    def test_parse_from_dict(self):
        config = FlowConfig.model_validate(
            {"n": 3, "T": 0.5, "delta": 0.1, "background": {"kind": "flat_torus", "L": 1.0}})
        assert isinstance(config.background, FlatTorus)
        assert config.background.L == 1.0

    @pytest.mark.unit
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            FlowConfig.model_validate(
                {"T": 0.5, "delta": 0.1, "background": {"kind": "hyperbolic"}})

    @pytest.mark.unit
    def test_torus_default_side(self, torus_config):
        assert torus_config.background.L == pytest.approx(2 * math.pi)
