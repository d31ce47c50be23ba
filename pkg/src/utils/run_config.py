# src/utils/run_config.py
"""
utils/run_config.py

Parser for run-config files: a flat `key = value` format with [run],
[flow] and [mc] section headers.

    [run]
    scenario = scalar-convergence
    seed = 7

    [flow]
    background = torus      ; sphere | torus | both
    T = 1.0

    [mc]
    N_list = 100,1000,10000

Parsing is strict: unknown keys, keys under the wrong header and repeated
keys are rejected with the offending key and line. Values are validated by
the RunConfig pydantic model; command-line overrides are applied after the
file, and the resolved config is written back next to the results.
"""

import logging
import math
import re
from typing import Any, Dict, List, Literal, Optional, Tuple, get_args

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.core.errors import ConfigParseError, ConfigurationError
from src.schemas.flow_models import FlatTorus, FlowConfig, ShrinkingSphere

logger = logging.getLogger("ricci_lab")

ScenarioName = Literal[
    "ricci-validate", "curvature-check", "operator-check", "scalar-convergence",
    "frame-convergence", "cylinder-convergence", "gradient-estimate", "all",
]
SCENARIO_NAMES: Tuple[str, ...] = get_args(ScenarioName)

SECTIONS: Dict[str, Tuple[str, ...]] = {
    "run": ("scenario", "seed", "out_dir"),
    "flow": ("background", "n", "T", "delta", "c0", "L", "start_lag"),
    "mc": ("paths", "step", "N_list", "N_small_list", "save_every"),
}
KEY_SECTION = {key: section for section, keys in SECTIONS.items() for key in keys}
# '#' or ';' opens a comment at the start of a line or after whitespace
COMMENT = re.compile(r"(?:^|\s)[#;].*$")

# window defaults per background when T / delta are not given
SPHERE_WINDOW = {"T": 0.4, "delta": 0.02}
TORUS_WINDOW = {"T": 1.0, "delta": 0.05}


class RunConfig(BaseModel):
    """A fully validated experiment configuration."""
    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioName = Field(..., description="Scenario to run.")
    seed: int = Field(0, ge=0, le=(1 << 64) - 1, description="Master seed; the only source of randomness.")
    out_dir: Optional[str] = Field(None, description="Output directory (settings default when unset).")

    background: Literal["sphere", "torus", "both"] = Field("both", description="Background(s) to run on.")
    n: int = Field(2, ge=1, description="Spatial dimension.")
    T: Optional[float] = Field(None, gt=0, description="Observation time (per-background default when unset).")
    delta: Optional[float] = Field(None, gt=0, description="Boundary offset (per-background default when unset).")
    c0: float = Field(1.0, gt=0, description="Initial sphere scale.")
    L: float = Field(2 * math.pi, gt=0, description="Torus side length.")
    start_lag: Optional[float] = Field(None, gt=0, description="tau0 - delta of the N-process (delta when unset).")

    paths: Optional[int] = Field(None, ge=4, description="Paths per ensemble (settings default when unset).")
    step: Optional[float] = Field(None, gt=0, description="Euler step h (settings default when unset).")
    N_list: Optional[List[int]] = Field(None, description="Grid of sphere dimensions N.")
    N_small_list: List[int] = Field([2, 4, 8], description="Small N for full-chart finite-difference checks.")
    save_every: int = Field(1, ge=1, description="Save stride of the martingale-residual paths.")

    @field_validator("N_list", "N_small_list", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            items = [item.strip() for item in value.split(",") if item.strip()]
            if not items:
                raise ValueError("expected a comma-separated list of integers")
            return items
        return value

    @field_validator("N_list", "N_small_list")
    @classmethod
    def _positive_grid(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is None:
            return value
        if any(N < 1 for N in value):
            raise ValueError("grid entries must be positive integers")
        if len(set(value)) != len(value):
            raise ValueError("grid entries must be distinct")
        return value

    @property
    def backgrounds(self) -> List[str]:
        return ["sphere", "torus"] if self.background == "both" else [self.background]

    def _flow(self, label: str) -> FlowConfig:
        window = dict(SPHERE_WINDOW if label == "sphere" else TORUS_WINDOW)
        if self.T is not None:
            window["T"] = self.T
        if self.delta is not None:
            window["delta"] = self.delta
        spec = ShrinkingSphere(c0=self.c0) if label == "sphere" else FlatTorus(L=self.L)
        return FlowConfig(n=self.n, background=spec, **window)

    def flow_configs(self) -> List[FlowConfig]:
        configs = []
        for label in self.backgrounds:
            try:
                configs.append(self._flow(label))
            except ValidationError as e:
                message = _first_message(e)
                raise ConfigParseError(f"{label}: {message}", key=_constraint_key(message)) from None
        return configs


def _first_message(error: ValidationError) -> str:
    first = error.errors()[0]
    return str(first.get("msg", error)).removeprefix("Value error, ")


def _constraint_key(message: str) -> str:
    """The run-config key a FlowConfig constraint message points at."""
    if "delta < T" in message:
        return "delta"
    if "n >= 2" in message:
        return "n"
    return "T"


def parse_lines(text: str) -> Dict[str, Tuple[str, int]]:
    """key -> (raw value, line number); rejects unknown, misplaced and repeated keys."""
    values: Dict[str, Tuple[str, int]] = {}
    section: Optional[str] = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = COMMENT.sub("", raw).strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigParseError(f"unknown section [{section}]", line=number)
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected 'key = value', got {line!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEY_SECTION:
            raise ConfigParseError("unknown key", key=key, line=number)
        if section is not None and KEY_SECTION[key] != section:
            raise ConfigParseError(f"belongs to [{KEY_SECTION[key]}], found under [{section}]", key=key, line=number)
        if key in values:
            raise ConfigParseError(f"repeated (first set on line {values[key][1]})", key=key, line=number)
        if value == "":
            raise ConfigParseError("empty value", key=key, line=number)
        values[key] = (value, number)
    return values


def _line_of(key: Optional[str], values: Dict[str, Tuple[str, int]], overrides: Optional[Dict[str, Any]]) -> Optional[int]:
    if key is None or key not in values or (overrides or {}).get(key) is not None:
        return None
    return values[key][1]


def parse_config(text: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Parse run-config text and apply overrides (None values are ignored).
    Any validation failure becomes a ConfigParseError naming the key and,
    when it came from the file, the line.
    """
    values = parse_lines(text)
    data: Dict[str, Any] = {key: value for key, (value, _) in values.items()}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in KEY_SECTION:
            raise ConfigParseError("unknown override", key=key)
        data[key] = value
    if "scenario" not in data:
        raise ConfigParseError("a scenario is required (file or command line)", key="scenario")
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = str(first["loc"][0]) if first.get("loc") else None
        raise ConfigParseError(_first_message(e), key=key, line=_line_of(key, values, overrides)) from None
    try:
        config.flow_configs()
    except ConfigParseError as e:
        raise ConfigParseError(e.reason, key=e.key, line=_line_of(e.key, values, overrides)) from None
    logger.debug("Run config parsed", extra={"scenario": config.scenario, "keys": sorted(data)})
    return config


def load_config(path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    text = ""
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigurationError(f"cannot read run config {path}: {e}") from e
    return parse_config(text, overrides)


def _format_value(value: Any) -> str:
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(config: RunConfig) -> str:
    """The config in its own file format; parse_config(render_config(c)) == c."""
    data = config.model_dump()
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            if data[key] is None:
                lines.append(f"# {key} = (default)")
            else:
                lines.append(f"{key} = {_format_value(data[key])}")
        lines.append("")
    return "\n".join(lines)


# src/utils/run_config.py
