"""
tests/conftest.py

Pytest configuration and shared fixtures for all tests.

Fixtures provide the two reference backgrounds, small Monte Carlo sizes
and single-threaded engine options so unit tests stay fast and
deterministic. Acceptance-scale runs are marked slow.
"""

from pathlib import Path

import numpy as np
import pytest

from src.core.convergence_lab import MCParams
from src.core.rng import RngSpec
from src.core.sde_engine import EngineOptions
from src.schemas.flow_models import FlowConfig


# ============================================================================
# Backgrounds
# ============================================================================

@pytest.fixture
def sphere_config():
    """Shrinking round 2-sphere, T = 0.4, delta = 0.02."""
    return FlowConfig.default_sphere()


@pytest.fixture
def torus_config():
    """Static flat 2-torus of side 2 pi, T = 1, delta = 0.05."""
    return FlowConfig.default_torus()


@pytest.fixture(params=["sphere", "torus"])
def any_config(request):
    """Both backgrounds, one after the other."""
    if request.param == "sphere":
        return FlowConfig.default_sphere()
    return FlowConfig.default_torus()


# ============================================================================
# Monte Carlo
# ============================================================================

@pytest.fixture
def serial_options():
    """One worker, small chunks, no progress bars."""
    return EngineOptions(workers=1, chunk_size=64, progress=False)


@pytest.fixture
def rng_spec():
    return RngSpec(12345)


@pytest.fixture
def small_mc(serial_options):
    """Small ensembles with a coarse step for fast statistical tests."""
    return MCParams(paths=400, step=5e-3, seed=2024, options=serial_options)


@pytest.fixture
def numpy_rng():
    return np.random.default_rng(0)


# ============================================================================
# Files
# ============================================================================

@pytest.fixture
def temp_output_dir(tmp_path):
    """Create temporary output directory."""
    output_dir = tmp_path / "results"
    output_dir.mkdir()
    return output_dir


@pytest.fixture
def write_run_config(tmp_path):
    """Write run-config text to a file and return its path."""
    def _write(text: str, name: str = "run.config") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write


# ============================================================================
# Pytest Configuration
# ============================================================================

def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers",
        "unit: mark test as a unit test"
    )
    config.addinivalue_line(
        "markers",
        "e2e: mark test as an end-to-end test"
    )
    config.addinivalue_line(
        "markers",
        "slow: mark test as slow running"
    )
