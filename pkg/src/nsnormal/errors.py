"""Exception hierarchy.

Every error raised on purpose by the package derives from ``NormalFormError``;
most also derive from ``ValueError`` so callers that only care about bad input
can catch that.
"""

from __future__ import annotations


class NormalFormError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(NormalFormError, ValueError):
    """Operands disagree on blocks, truncation order, arithmetic mode or size."""


class SlotViolation(NormalFormError, ValueError):
    """A coefficient slot breaks the jet invariants."""


class SingularLinear(NormalFormError, ValueError):
    """A linear part that must be invertible is not."""


class StableLeak(NormalFormError, ValueError):
    """A map does not preserve the stable subspace."""


class NonPositiveScale(NormalFormError, ValueError):
    pass


class DegenerateGrid(NormalFormError, ValueError):
    pass


class IndexOutOfRange(NormalFormError, IndexError):
    pass


class DegreeViolation(NormalFormError, ValueError):
    pass


class LinearPartPresent(NormalFormError, ValueError):
    pass


class InvalidSpectralData(NormalFormError, ValueError):
    pass


class EpsilonTooLarge(NormalFormError, ValueError):
    pass


class ClosureViolation(NormalFormError, ArithmeticError):
    """A group operation left a nonzero contracted (MINUS) residual."""


class NotInGPlus(NormalFormError, ValueError):
    pass


class SpectralViolation(NormalFormError, ValueError):
    """A linear part falls outside the declared spectral bands."""


class NoConvergence(NormalFormError, RuntimeError):
    """The sweep schedule was exhausted before the Cauchy test passed."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class InvalidParams(NormalFormError, ValueError):
    pass


class FitFailure(NormalFormError, ValueError):
    pass


class TooFewSamples(NormalFormError, ValueError):
    pass


class NotBlockDiagonal(NormalFormError, ValueError):
    pass


class HashMismatch(NormalFormError, ValueError):
    pass
