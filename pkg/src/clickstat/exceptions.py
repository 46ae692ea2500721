"""Exception hierarchy.

Everything raised on purpose derives from :class:`ClickstatError`; the CLI maps
the three families below onto exit codes 2, 3 and 4.
"""


class ClickstatError(Exception):
    """Base class for all library errors."""


class DomainError(ClickstatError, ValueError):
    """A parameter lies outside the domain where the model is defined."""


class NumericalError(ClickstatError, ArithmeticError):
    """A computation could not produce a meaningful number."""


class UndefinedQError(NumericalError):
    """Q parameter requested for a degenerate distribution (zero denominator)."""


class ModelInconsistencyError(NumericalError):
    """A convolution produced probability mass beyond the available pixels."""


class OutOfBracketError(NumericalError):
    """Root finding target lies outside the admissible bracket."""


class IllPosedInversionError(NumericalError):
    """The click-to-photon system cannot be solved to the requested tolerance."""

    def __init__(self, message, condition_number=None, residual=None):
        super().__init__(message)
        self.condition_number = condition_number
        self.residual = residual


class InitializationError(NumericalError):
    """No usable peak structure was found in a pulse-area histogram."""


class FitError(NumericalError):
    """The mixture fit diverged. ``best`` holds the best state reached."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateFitError(NumericalError):
    """All fitted peak amplitudes vanish."""


class IngestionError(ClickstatError, OSError):
    """Input data could not be read or parsed."""
