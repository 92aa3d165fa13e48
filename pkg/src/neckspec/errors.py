"""Exception taxonomy shared across the package."""

from __future__ import annotations


class NeckspecError(Exception):
    """Base class for all package errors."""


class SpectrumFormatError(NeckspecError):
    """A spectrum file is malformed; the message names the offending field."""


class ContractViolation(NeckspecError):
    """An input violates a documented precondition of the calculus."""


class AnalysisError(NeckspecError):
    """A numerical certificate failed (fit residual, unexpected bound state)."""


class MatchingConditionError(NeckspecError):
    """Two building blocks cannot be glued (incompatible spectra or grids)."""


class NotOrthogonalError(NeckspecError):
    """Data required to be orthogonal to the substitute kernel is not."""


class DegenerateSystemError(NeckspecError):
    """The characteristic system lost rank at this neck length."""


class NoContractionError(NeckspecError):
    """The correction iteration does not contract; carries the measured rate."""

    def __init__(self, eta: float):
        super().__init__(f"iteration does not contract: eta = {eta:.6g} >= 1")
        self.eta = eta


class ResolutionError(NeckspecError):
    """The grid is too coarse to represent the requested object."""


class InsufficientEigenvaluesError(NeckspecError):
    """An eigenvalue count was requested beyond the computed window."""
