"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad dimensions, indices, delays or schema."""


class PlantDiverged(ArithmeticError):
    """Plant state became non-finite or left the divergence bound."""

    def __init__(self, time, message=None):
        self.time = time
        super().__init__(message or f"plant diverged at t={time:.6g} s")


class ControllerFault(ArithmeticError):
    """A controller produced a non-finite output."""

    def __init__(self, time, message=None):
        self.time = time
        super().__init__(message or f"controller output non-finite at t={time:.6g} s")


def check_keys(d, allowed, where, required=()):
    """Reject unknown or missing keys in a config object."""
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {missing}")
