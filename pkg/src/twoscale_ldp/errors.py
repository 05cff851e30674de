"""Exception hierarchy shared by every module of the package."""


class LdpError(Exception):
    """Base class for all errors raised by twoscale_ldp."""


class NumericFailure(LdpError):
    """A numerical routine did not reach its accuracy target.

    ``partial`` carries the best estimate available when the routine gave up
    (a quadrature value, an eigenvalue, a residual), so callers can decide
    whether it is still usable.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ReducibleGeneratorError(LdpError):
    """The rate matrix splits into more than one communicating class."""

    def __init__(self, message, blocks=()):
        super().__init__(message)
        self.blocks = tuple(tuple(b) for b in blocks)


class UnsupportedError(LdpError):
    """The requested combination of inputs is outside what a routine handles."""


class ConfigError(LdpError):
    """Invalid CLI configuration (unknown key, wrong type, violated invariant)."""
