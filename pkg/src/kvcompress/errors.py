"""Exception hierarchy shared by every kvcompress module."""


class KVCompressError(Exception):
    """Base class for all errors raised by the package."""


class InvalidShape(KVCompressError, ValueError):
    pass


class NonFiniteInput(KVCompressError, ValueError):
    pass


class InvalidK(KVCompressError, ValueError):
    pass


class InvalidKernel(KVCompressError, ValueError):
    pass


class InvalidIndex(KVCompressError, IndexError):
    pass


class InvalidWindow(KVCompressError, ValueError):
    pass


class BudgetExceedsSequence(KVCompressError, ValueError):
    pass


class EmptyCache(KVCompressError, ValueError):
    pass


class EmptySelection(KVCompressError, ValueError):
    pass


class InvalidRatio(KVCompressError, ValueError):
    pass


class BudgetTooSmall(KVCompressError, ValueError):
    pass


class InvalidInput(KVCompressError, ValueError):
    pass


class InvalidSpec(KVCompressError, ValueError):
    pass


class InvalidConfig(KVCompressError, ValueError):
    pass


class TraceFormatError(KVCompressError, ValueError):
    pass


class NumericalFailure(KVCompressError, ArithmeticError):
    """A decode step produced a non-finite attention output."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite attention output at decode step {step}")
