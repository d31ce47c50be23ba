"""
tests/unit/core/test_test_functions.py

Unit tests for closed-form test functions on the block frame space.

Tests cover:
- Exact gradients and Hessians against finite differences
- Arity detection from the variables a function reads
- Frame layout of the flattened state
- Batteries and their contracts
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.errors import ContractError
from src.core.test_functions import (
    Arity,
    Constant,
    CosineFactor,
    LinearFunction,
    ProductFunction,
    flatten_state,
    frame_battery,
    frame_index,
    random_cubic,
    scalar_battery,
    spatial_block_battery,
    variable_mask,
)

D = 3  # block size for n = 2


def _fd_gradient(f, w, h=1e-6):
    grad = np.zeros_like(w)
    for i in range(w.shape[0]):
        step = np.zeros_like(w)
        step[i] = h
        grad[i] = (f.value(w + step) - f.value(w - step)) / (2 * h)
    return grad


def _fd_hessian(f, w, h=1e-5):
    hess = np.zeros((w.shape[0], w.shape[0]))
    for i in range(w.shape[0]):
        step = np.zeros_like(w)
        step[i] = h
        hess[i] = (f.gradient(w + step) - f.gradient(w - step)) / (2 * h)
    return hess


class TestLayout:
    """Test state flattening and masks."""

    @pytest.mark.unit
    def test_flatten_state(self):
        z = np.array([0.1, 1.0, 2.0])
        e = np.arange(9.0).reshape(3, 3)
        w = flatten_state(z, e)
        assert w.shape == (12,)
        assert w[frame_index(D, 1, 2)] == e[1, 2]

    @pytest.mark.unit
    def test_flatten_state_broadcasts_batch(self):
        w = flatten_state(np.zeros((5, 3)), np.eye(3))
        assert w.shape == (5, 12)

    @pytest.mark.unit
    def test_masks(self):
        mask = variable_mask(D, base=False, row0=True)
        frame = mask[D:].reshape(D, D)
        assert frame[0].all()
        assert not frame[1:].any()
        assert not mask[:D].any()


class TestDerivatives:
    """Test exact derivatives against central differences."""

    @pytest.mark.unit
    def test_random_cubic(self):
        rng = np.random.default_rng(3)
        f = random_cubic(D, rng, variable_mask(D, base=True, spatial_block=True, row0=True, column0=True))
        w = rng.normal(size=D + D * D)
        assert_allclose(f.gradient(w), _fd_gradient(f, w), atol=1e-6)
        assert_allclose(f.hessian(w), _fd_hessian(f, w), atol=1e-6)

    @pytest.mark.unit
    def test_product_with_cosine(self):
        rng = np.random.default_rng(4)
        f = ProductFunction(random_cubic(D, rng, variable_mask(D)), CosineFactor(D, 1, 2.0, 0.3))
        w = rng.normal(size=D + D * D)
        assert_allclose(f.gradient(w), _fd_gradient(f, w), atol=1e-6)
        assert_allclose(f.hessian(w), _fd_hessian(f, w), atol=1e-5)

    @pytest.mark.unit
    def test_hessian_symmetric(self):
        f = frame_battery(D)[-1]
        w = np.random.default_rng(5).normal(size=D + D * D)
        H = f.hessian(w)
        assert_allclose(H, H.T, atol=1e-12)

    @pytest.mark.unit
    def test_split_derivatives_shapes(self):
        f = frame_battery(D)[0]
        derivs = f.derivatives(np.zeros((4, D)), np.broadcast_to(np.eye(D), (4, D, D)))
        assert derivs.gz.shape == (4, D)
        assert derivs.ge.shape == (4, D, D)
        assert derivs.hze.shape == (4, D, D, D)
        assert derivs.hee.shape == (4, D, D, D, D)

    @pytest.mark.unit
    def test_constant_and_linear(self):
        w = np.ones(D + D * D)
        assert float(Constant(D, 2.5).value(w)) == 2.5
        assert float(LinearFunction(D, 0).value(np.arange(12.0))) == 0.0
        assert float(LinearFunction(D, 4).value(np.arange(12.0))) == 4.0


class TestArity:
    """Test arity detection and contracts."""

    @pytest.mark.unit
    def test_arity_from_mask(self):
        rng = np.random.default_rng(0)
        assert random_cubic(D, rng, variable_mask(D)).arity is Arity.BASE
        assert random_cubic(D, rng, variable_mask(D, spatial_block=True)).arity is Arity.SPATIAL_BLOCK
        assert random_cubic(D, rng, variable_mask(D, row0=True)).arity is Arity.FRAME

    @pytest.mark.unit
    def test_base_function_without_frame(self):
        f = scalar_battery(D)[1]
        assert np.isfinite(f(np.array([0.2, 0.1, 0.3])))

    @pytest.mark.unit
    def test_frame_function_requires_frame(self):
        f = frame_battery(D)[0]
        with pytest.raises(ContractError):
            f(np.array([0.2, 0.1, 0.3]))

    @pytest.mark.unit
    def test_require(self):
        f = frame_battery(D)[-1]
        with pytest.raises(ContractError):
            f.require(Arity.BASE, Arity.SPATIAL_BLOCK)

    @pytest.mark.unit
    def test_product_block_mismatch(self):
        with pytest.raises(ContractError):
            ProductFunction(Constant(3), Constant(4))


class TestBatteries:
    """Test the shipped batteries."""

    @pytest.mark.unit
    def test_scalar_battery_is_base_only(self):
        battery = scalar_battery(D)
        assert battery[0].name == "tau"
        assert all(f.arity is Arity.BASE for f in battery)

    @pytest.mark.unit
    def test_frame_battery_covers_row0(self):
        battery = frame_battery(D)
        assert any(f.reads_row0 for f in battery)
        assert any(f.arity is Arity.SPATIAL_BLOCK for f in battery)

    @pytest.mark.unit
    def test_spatial_block_battery(self):
        assert all(f.arity is Arity.SPATIAL_BLOCK for f in spatial_block_battery(D))

    @pytest.mark.unit
    def test_batteries_are_seeded(self):
        w = np.random.default_rng(1).normal(size=D + D * D)
        a = [float(f.value(w)) for f in frame_battery(D)]
        b = [float(f.value(w)) for f in frame_battery(D)]
        assert a == b
