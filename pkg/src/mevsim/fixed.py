"""Fixed-point token amounts with six fractional digits.

Every quantity that touches chain state is an integer count of millionths.
Arithmetic that can produce a fraction rounds toward zero (floor for the
non-negative values used here) so runs are bit-identical everywhere.
"""

from __future__ import annotations

from decimal import Decimal, InvalidOperation
from fractions import Fraction
from functools import total_ordering
from typing import Union

SCALE = 1_000_000
DIGITS = 6

Number = Union[int, str, Decimal, Fraction, "TokenAmount"]


def parse_micros(value) -> int:
    """Convert a decimal string / int / Decimal to micros, flooring extra digits."""
    if isinstance(value, TokenAmount):
        return value.micros
    if isinstance(value, bool):
        raise TypeError("bool is not an amount")
    if isinstance(value, int):
        return value * SCALE
    if isinstance(value, Fraction):
        return (value.numerator * SCALE) // value.denominator
    if isinstance(value, float):
        # floats only arrive from hand-written configs; go through repr
        value = repr(value)
    try:
        d = Decimal(str(value).strip())
    except InvalidOperation as exc:
        raise ValueError(f"not a decimal amount: {value!r}") from exc
    if not d.is_finite():
        raise ValueError(f"not a finite amount: {value!r}")
    scaled = d.scaleb(DIGITS)
    return int(scaled.to_integral_value(rounding="ROUND_FLOOR"))


def format_micros(micros: int) -> str:
    sign = "-" if micros < 0 else ""
    q, r = divmod(abs(micros), SCALE)
    return f"{sign}{q}.{r:06d}"


@total_ordering
class TokenAmount:
    """Non-negative quantity stored as an integer number of millionths."""

    __slots__ = ("micros",)

    def __init__(self, micros: int = 0):
        if not isinstance(micros, int) or isinstance(micros, bool):
            raise TypeError(f"micros must be int, got {type(micros).__name__}")
        if micros < 0:
            raise ValueError(f"TokenAmount cannot be negative ({micros} micros)")
        object.__setattr__(self, "micros", micros)

    def __setattr__(self, name, value):
        raise AttributeError("TokenAmount is immutable")

    @classmethod
    def of(cls, value: Number) -> "TokenAmount":
        return cls(parse_micros(value))

    @classmethod
    def zero(cls) -> "TokenAmount":
        return _ZERO

    def __add__(self, other: "TokenAmount") -> "TokenAmount":
        return TokenAmount(self.micros + _micros(other))

    def __sub__(self, other: "TokenAmount") -> "TokenAmount":
        return TokenAmount(self.micros - _micros(other))

    def mul_fraction(self, num: int, den: int) -> "TokenAmount":
        """Floor of self * num / den."""
        if den <= 0 or num < 0:
            raise ValueError("fraction must be non-negative with positive denominator")
        return TokenAmount(self.micros * num // den)

    def scale(self, factor: float | Fraction) -> "TokenAmount":
        f = Fraction(factor).limit_denominator(10**12) if isinstance(factor, float) else Fraction(factor)
        return self.mul_fraction(f.numerator, f.denominator)

    def to_fraction(self) -> Fraction:
        return Fraction(self.micros, SCALE)

    def __float__(self) -> float:
        return self.micros / SCALE

    def __bool__(self) -> bool:
        return self.micros != 0

    def __eq__(self, other) -> bool:
        if isinstance(other, TokenAmount):
            return self.micros == other.micros
        return NotImplemented

    def __lt__(self, other) -> bool:
        if isinstance(other, TokenAmount):
            return self.micros < other.micros
        return NotImplemented

    def __hash__(self) -> int:
        return hash(("TokenAmount", self.micros))

    def __str__(self) -> str:
        return format_micros(self.micros)

    def __repr__(self) -> str:
        return f"TokenAmount('{self}')"

    def __reduce__(self):
        return (TokenAmount, (self.micros,))


def _micros(x) -> int:
    if isinstance(x, TokenAmount):
        return x.micros
    raise TypeError(f"expected TokenAmount, got {type(x).__name__}")


_ZERO = TokenAmount(0)


def amt(value: Number) -> TokenAmount:
    """Shorthand constructor used throughout configs and tests."""
    return TokenAmount.of(value)
