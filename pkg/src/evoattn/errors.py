"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor rank or dimensions are incompatible with an operation."""


class ParameterError(ValueError):
    """A scalar argument is outside its allowed domain."""


class ValidationError(ValueError):
    """A domain object violates its invariants."""


class ConfigError(ValueError):
    """A configuration value or combination of values is unusable."""


class NumericError(ValueError):
    """A numeric value is non-finite where finiteness is required."""


class FitnessError(RuntimeError):
    """Fitness evaluation failed; carries the offending chromosome."""

    def __init__(self, chromosome, message):
        super().__init__(f"fitness evaluation failed for {chromosome}: {message}")
        self.chromosome = chromosome
