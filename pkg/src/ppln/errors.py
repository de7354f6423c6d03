"""Exception types raised across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """Shapes or dimensions that do not compose."""


class FitError(RuntimeError):
    """Curve fitting diverged or produced non-finite values."""


class TrainingError(RuntimeError):
    """Network training hit a non-finite loss."""


class OracleError(RuntimeError):
    """A reference computation could not be evaluated."""
