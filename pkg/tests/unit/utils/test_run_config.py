"""
tests/unit/utils/test_run_config.py

Unit tests for the run-config parser.

Tests cover:
- Defaults for an empty file
- Comma-separated grids
- Strict rejection of unknown, misplaced, repeated and empty keys
- Window constraints reported with key and line
- Command-line overrides
- Rendering the resolved config back to text
"""

import pytest

from src.core.errors import ConfigParseError, ConfigurationError
from src.utils.run_config import (
    SCENARIO_NAMES,
    load_config,
    parse_config,
    parse_lines,
    render_config,
)


class TestDefaults:
    """Test parsing of minimal configs."""

    @pytest.mark.unit
    def test_empty_file_with_scenario_override(self):
        config = parse_config("", {"scenario": "curvature-check"})
        assert config.scenario == "curvature-check"
        assert config.seed == 0
        assert config.background == "both"
        assert config.n == 2
        assert config.N_small_list == [2, 4, 8]
        assert config.save_every == 1

    @pytest.mark.unit
    def test_default_windows(self):
        config = parse_config("[run]\nscenario = all\n")
        sphere, torus = config.flow_configs()
        assert (sphere.T, sphere.delta) == (0.4, 0.02)
        assert (torus.T, torus.delta) == (1.0, 0.05)

    @pytest.mark.unit
    def test_missing_scenario(self):
        with pytest.raises(ConfigParseError) as info:
            parse_config("[run]\nseed = 3\n")
        assert info.value.key == "scenario"

    @pytest.mark.unit
    def test_known_scenarios(self):
        assert "all" in SCENARIO_NAMES
        assert "frame-convergence" in SCENARIO_NAMES


class TestValues:
    """Test value parsing."""

    @pytest.mark.unit
    def test_N_list_split(self):
        config = parse_config("[run]\nscenario = scalar-convergence\n[mc]\nN_list = 100,1000,10000\n")
        assert config.N_list == [100, 1000, 10000]

    @pytest.mark.unit
    def test_comments_and_whitespace(self):
        text = "# header\n[run]\n  scenario = all   ; trailing\n\nseed = 42 # the seed\n"
        config = parse_config(text)
        assert config.seed == 42

    @pytest.mark.unit
    def test_comment_marks_inside_values_are_kept(self):
        text = "[run]\nscenario = all\nout_dir = results/run#3;b  # where results go\n;seed = 9\n"
        assert parse_config(text).out_dir == "results/run#3;b"
        assert "seed" not in parse_lines(text)

    @pytest.mark.unit
    def test_keys_without_section(self):
        config = parse_config("scenario = all\nbackground = torus\n")
        assert config.backgrounds == ["torus"]

    @pytest.mark.unit
    def test_duplicate_grid_entries(self):
        with pytest.raises(ConfigParseError) as info:
            parse_config("[run]\nscenario = all\n[mc]\nN_list = 10,10\n")
        assert info.value.key == "N_list"
        assert info.value.line == 4

    @pytest.mark.unit
    def test_bad_scenario_value(self):
        with pytest.raises(ConfigParseError) as info:
            parse_config("[run]\nscenario = everything\n")
        assert info.value.key == "scenario"
        assert info.value.line == 2

    @pytest.mark.unit
    def test_delta_not_below_T(self):
        text = "[run]\nscenario = all\n[flow]\nbackground = sphere\nT = 0.4\ndelta = 0.6\n"
        with pytest.raises(ConfigParseError) as info:
            parse_config(text)
        assert info.value.key == "delta"
        assert info.value.line == 6
        assert "delta < T" in str(info.value)

    @pytest.mark.unit
    def test_sphere_extinction_points_at_T(self):
        text = "[run]\nscenario = all\n[flow]\nbackground = sphere\nT = 0.49\n"
        with pytest.raises(ConfigParseError) as info:
            parse_config(text)
        assert info.value.key == "T"
        assert info.value.line == 5


class TestStrictness:
    """Test rejection of malformed files."""

    @pytest.mark.unit
    def test_unknown_key(self):
        with pytest.raises(ConfigParseError) as info:
            parse_lines("[run]\nscenario = all\ncolour = red\n")
        assert info.value.key == "colour"
        assert info.value.line == 3

    @pytest.mark.unit
    def test_wrong_section(self):
        with pytest.raises(ConfigParseError, match=r"belongs to \[mc\]") as info:
            parse_lines("[flow]\npaths = 10\n")
        assert info.value.key == "paths"

    @pytest.mark.unit
    def test_repeated_key(self):
        with pytest.raises(ConfigParseError, match="first set on line 1") as info:
            parse_lines("seed = 1\nseed = 2\n")
        assert info.value.line == 2

    @pytest.mark.unit
    def test_unknown_section(self):
        with pytest.raises(ConfigParseError, match="unknown section"):
            parse_lines("[output]\n")

    @pytest.mark.unit
    def test_missing_equals(self):
        with pytest.raises(ConfigParseError):
            parse_lines("scenario all\n")

    @pytest.mark.unit
    def test_empty_value(self):
        with pytest.raises(ConfigParseError, match="empty value"):
            parse_lines("seed =\n")

    @pytest.mark.unit
    def test_message_names_key_and_line(self):
        with pytest.raises(ConfigParseError) as info:
            parse_lines("\n\nbogus = 1\n")
        assert str(info.value).startswith("key 'bogus', line 3:")


class TestOverrides:
    """Test command-line overrides."""

    @pytest.mark.unit
    def test_override_wins(self):
        config = parse_config("[run]\nscenario = all\nseed = 1\n", {"seed": 9, "paths": None})
        assert config.seed == 9
        assert config.paths is None

    @pytest.mark.unit
    def test_override_error_has_no_line(self):
        with pytest.raises(ConfigParseError) as info:
            parse_config("[run]\nscenario = all\n[flow]\nT = 0.4\n", {"delta": 0.6})
        assert info.value.key == "delta"
        assert info.value.line is None

    @pytest.mark.unit
    def test_unknown_override(self):
        with pytest.raises(ConfigParseError, match="unknown override"):
            parse_config("", {"scenario": "all", "workers": 4})


class TestFiles:
    """Test loading and rendering."""

    @pytest.mark.unit
    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(str(tmp_path / "absent.config"))

    @pytest.mark.unit
    def test_load_from_file(self, write_run_config):
        path = write_run_config("[run]\nscenario = operator-check\n[mc]\nN_small_list = 2,4\n")
        config = load_config(str(path))
        assert config.N_small_list == [2, 4]

    @pytest.mark.unit
    def test_render_reparses_to_same_config(self):
        config = parse_config("[run]\nscenario = all\nseed = 5\n[flow]\nT = 0.3\n[mc]\nN_list = 10,20\n")
        text = render_config(config)
        assert "# out_dir = (default)" in text
        assert parse_config(text) == config
