"""
tests/unit/utils/test_config_manager.py

Unit tests for process settings and the JSON log formatter.

Tests cover:
- Settings singleton loading from config/settings.yaml
- Engine and output defaults
- Component tag added by the JSON formatter
"""

import json
import logging

import pytest

from src.utils.config_manager import ConfigManager, SimulationSettings
from src.utils.logger import LOGGER_NAME, CustomJsonFormatter


class TestConfigManager:
    """Test settings loading."""

    @pytest.mark.unit
    def test_singleton(self):
        assert ConfigManager.get_settings() is ConfigManager.get_settings()

    @pytest.mark.unit
    def test_reset_reloads(self):
        first = ConfigManager.get_settings()
        ConfigManager.reset()
        second = ConfigManager.get_settings()
        assert first is not second
        assert first == second

    @pytest.mark.unit
    def test_shipped_values(self):
        settings = ConfigManager.get_settings()
        assert settings.simulation.workers >= 1
        assert settings.simulation.default_step > 0
        assert settings.output.max_write_attempts >= 1
        assert LOGGER_NAME in settings.logging.loggers

    @pytest.mark.unit
    def test_simulation_validation(self):
        with pytest.raises(ValueError):
            SimulationSettings(workers=0)


class TestJsonFormatter:
    """Test the structured log formatter."""

    @pytest.mark.unit
    def test_component_and_extra_fields(self):
        formatter = CustomJsonFormatter("%(levelname)s %(message)s")
        record = logging.LogRecord(LOGGER_NAME, logging.INFO, __file__, 1, "Experiment finished", None, None)
        record.scenario = "ricci-validate"
        payload = json.loads(formatter.format(record))
        assert payload["message"] == "Experiment finished"
        assert payload["component"] == LOGGER_NAME
        assert payload["scenario"] == "ricci-validate"
