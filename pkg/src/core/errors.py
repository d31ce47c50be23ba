# src/core/errors.py
"""
src/core/errors.py

Exception hierarchy shared by the numerical core, the run-config parser
and the result writers. Everything raised on purpose derives from LabError
so the CLI can report it per scenario.
"""

from typing import Optional


class LabError(Exception):
    """Base class for all errors raised by the lab."""
    pass


class DomainError(LabError, ValueError):
    """A point, time or request lies outside the domain where it is defined."""
    pass


class ChartError(LabError, ValueError):
    """A point cannot be represented in the requested chart."""
    pass


class ConfigurationError(LabError, ValueError):
    """Invalid flow/run configuration, or N too small for a definite metric."""
    pass


class ConditioningError(LabError, ArithmeticError):
    """Metric too close to singular for finite differences to be trusted."""
    pass


class IntegratorError(LabError, RuntimeError):
    """Thrown if integration arguments or coefficients fail basic sanity checks."""
    pass


class ContractError(LabError, TypeError):
    """A test function was used on states it does not read."""
    pass


class ConfigParseError(ConfigurationError):
    """Run-config text rejected; carries the offending key and line."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        self.reason = message
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class OutputError(LabError, OSError):
    """Writing an output artifact failed."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# src/core/errors.py
