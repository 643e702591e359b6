"""Exception types shared across the solver stack."""


class DimensionError(ValueError):
    """Grid or tensor shapes are inconsistent with the requested operation."""


class SingularityError(ArithmeticError):
    """An operator diagonal or kernel spectrum is (numerically) singular."""


class SolverError(RuntimeError):
    """An iterative solver broke down before reaching its target."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values."""


class IngestionError(OSError):
    """A corpus or checkpoint file could not be read or parsed."""


class ConfigurationError(ValueError):
    """A run configuration is invalid or incomplete."""
