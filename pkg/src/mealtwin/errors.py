"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid configuration or input data (maps to CLI exit code 2)."""


class ContractError(RuntimeError):
    """A caller violated an internal API contract (e.g. applied a masked action)."""


class NumericalError(Exception):
    """Training or evaluation produced non-finite values (maps to CLI exit code 3)."""
