"""Exception types raised across the package.

Each class carries a short ``category`` string so the command-line front end
can report failures in a machine-readable way.
"""


class MsdcieError(Exception):
    category = "error"


class ValidationError(MsdcieError, ValueError):
    """Invalid input argument or configuration value."""

    category = "validation"


class DomainError(MsdcieError, ValueError):
    """Argument outside the mathematical domain of a special function."""

    category = "domain"


class AssemblyError(MsdcieError):
    category = "assembly"


class SolverError(MsdcieError):
    """Dense forward solve failed or the system is numerically singular."""

    category = "solver"

    def __init__(self, message, view=None):
        super().__init__(message)
        self.view = view


class NumericalPoleError(MsdcieError, ArithmeticError):
    category = "pole"


class NormalizationError(MsdcieError, ArithmeticError):
    category = "normalization"


class IllConditionedError(MsdcieError):
    category = "ill-conditioned"


class DivergenceError(MsdcieError):
    category = "divergence"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class RoiCollapseError(MsdcieError):
    """The filtered contrast estimate is empty or the RoI degenerated."""

    category = "roi-collapse"


class ParseError(MsdcieError, ValueError):
    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InverseCrimeError(MsdcieError):
    """Forward grid not finer than the inversion grid."""

    category = "inverse-crime"
