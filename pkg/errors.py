"""
errors.py

Exception hierarchy shared by every module. The CLI maps the two branches
to exit codes: InputError -> 2, ModelError -> 3 (OSError -> 4).
"""

from typing import Optional, Sequence


class MetaTraceError(Exception):
    """Base class for all errors raised by metatrace."""


class InputError(MetaTraceError, ValueError):
    """Invalid data, arguments or specifications."""


class DatasetError(InputError):
    """A dataset failed validation; `row` is the 1-based data row when known."""

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class DomainError(InputError):
    """An argument lies outside the domain of the operation."""


class DimensionError(InputError):
    """Vector or matrix dimensions do not match."""


class UnknownLabelError(InputError):
    """A study label or dataset name was not found."""

    def __init__(self, kind: str, name: str, suggestions: Sequence[str] = ()):
        message = f"unknown {kind} '{name}'"
        if suggestions:
            message += f" (did you mean: {', '.join(suggestions)}?)"
        super().__init__(message)
        self.name = name
        self.suggestions = list(suggestions)


class ModelError(MetaTraceError, ArithmeticError):
    """The model cannot be fitted to the given data."""


class RankDeficientError(ModelError):
    """The design matrix does not have full column rank."""

    def __init__(self, columns: Sequence[str], message: Optional[str] = None):
        self.columns = list(columns)
        super().__init__(message or f"design matrix is rank deficient; collinear columns: {', '.join(self.columns)}")


class ImproperPosteriorError(ModelError):
    """The heterogeneity posterior would not be normalizable."""


class UnsupportedDesignError(ModelError):
    """The requested estimator does not support the design."""


class ConvergenceError(ModelError):
    """A numerical search failed to bracket or converge."""
