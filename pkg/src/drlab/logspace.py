"""Nonnegative reals carried in log space.

Free-energy bounds decay like m**-n and leave the f64 range after a few
hundred iterations, while the quantities they are built from (expectations,
mass at zero) stay O(1).  A ``LogReal`` stores only the natural log of a
nonnegative number (``-inf`` encodes zero), which keeps every bound finite
and comparable no matter how deep a run goes.

Only the handful of operations the bounds arithmetic needs are provided.
"""

from __future__ import annotations

import math
from typing import Union

_NEG_INF = float("-inf")

Number = Union[int, float, "LogReal"]


class LogReal:
    """A nonnegative real number represented by its natural logarithm."""

    __slots__ = ("log",)

    def __init__(self, log: float):
        self.log = float(log)

    @classmethod
    def zero(cls) -> "LogReal":
        return cls(_NEG_INF)

    @classmethod
    def from_float(cls, x: float) -> "LogReal":
        if x < 0:
            raise ValueError(f"LogReal holds nonnegative values, got {x!r}")
        if x == 0:
            return cls.zero()
        return cls(math.log(x))

    def is_zero(self) -> bool:
        return self.log == _NEG_INF

    def to_float(self) -> float:
        """Best f64 value; underflows to 0.0 and overflows to inf silently."""
        if self.log == _NEG_INF:
            return 0.0
        try:
            return math.exp(self.log)
        except OverflowError:
            return float("inf")

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other: "LogReal") -> "LogReal":
        a, b = self.log, _aslog(other)
        if a == _NEG_INF:
            return LogReal(b)
        if b == _NEG_INF:
            return LogReal(a)
        hi, lo = (a, b) if a >= b else (b, a)
        return LogReal(hi + math.log1p(math.exp(lo - hi)))

    __radd__ = __add__

    def __mul__(self, other: Number) -> "LogReal":
        return LogReal(self.log + _aslog(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Number) -> "LogReal":
        return LogReal(self.log - _aslog(other))

    # -- comparisons --------------------------------------------------------

    def __lt__(self, other: Number) -> bool:
        return self.log < _aslog(other)

    def __le__(self, other: Number) -> bool:
        return self.log <= _aslog(other)

    def __gt__(self, other: Number) -> bool:
        return self.log > _aslog(other)

    def __ge__(self, other: Number) -> bool:
        return self.log >= _aslog(other)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (LogReal, int, float)):
            return self.log == _aslog(other)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(("LogReal", self.log))

    # -- presentation -------------------------------------------------------

    def log10(self) -> float:
        return self.log / math.log(10.0)

    def decimal_string(self, digits: int = 17) -> str:
        """Decimal mantissa/exponent form valid far below the f64 range."""
        if self.is_zero():
            return "0"
        l10 = self.log10()
        exp10 = math.floor(l10)
        mant = 10.0 ** (l10 - exp10)
        # Guard against mantissa rounding up to 10 at the boundary.
        if mant >= 10.0:
            mant /= 10.0
            exp10 += 1
        return f"{mant:.{digits - 1}f}e{exp10:+d}"

    def __repr__(self) -> str:
        return f"LogReal(log={self.log!r})"


def _aslog(x: Number) -> float:
    if isinstance(x, LogReal):
        return x.log
    if x < 0:
        raise ValueError(f"cannot compare/combine LogReal with negative {x!r}")
    return math.log(x) if x > 0 else _NEG_INF
