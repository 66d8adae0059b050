"""Exception types shared across the package.

Every failure mode the library promises to detect maps to one of four classes,
so callers (and the command line front end) can translate outcomes into exit
codes without string matching.
"""


class DrError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DrError, ValueError):
    """Malformed input: bad masses, out-of-range parameters, unknown keys."""


class PreconditionError(DrError, ValueError):
    """Structurally valid input that violates an operation's precondition.

    Example: asking for a critical point of a law that puts mass at zero, or
    running an exactness check on a truncated trace.
    """


class CapacityError(DrError, RuntimeError):
    """A computation would exceed a declared support, depth or budget cap."""


class MomentOverflowError(DrError, OverflowError):
    """A float-backend weighted sum left the representable range.

    The rational backend computes the same quantity exactly; the message says
    so.
    """
