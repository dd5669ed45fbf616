"""Exact rationals in [0, 1] and the truncated connective algebra.

Values are plain fractions.Fraction instances kept in [0, 1]; Fraction
already gives canonical reduced form and exact comparisons, so this module
only adds range discipline, the connectives, and the p/q text format.
"""

from __future__ import annotations

import enum
from fractions import Fraction

from .errors import UsageError

Rat01 = Fraction

ZERO = Fraction(0)
ONE = Fraction(1)


class Cmp(enum.Enum):
    LT = -1
    EQ = 0
    GT = 1


def rat01(numerator: int, denominator: int = 1) -> Fraction:
    """Build a checked rational in [0, 1]."""
    if denominator == 0:
        raise UsageError("zero denominator")
    x = Fraction(numerator, denominator)
    return check_rat01(x)


def check_rat01(x: Fraction) -> Fraction:
    if x < 0 or x > 1:
        raise UsageError(f"value {x} outside [0, 1]")
    return x


def parse_rat(text: str) -> Fraction:
    """Parse `p/q` (also bare integers; `0` and `1` are the usual shorthands)."""
    s = text.strip()
    try:
        if "/" in s:
            p, q = s.split("/", 1)
            x = Fraction(int(p), int(q))
        else:
            x = Fraction(int(s))
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"bad rational {text!r}") from exc
    return x


def parse_rat01(text: str) -> Fraction:
    return check_rat01(parse_rat(text))


def format_rat(x: Fraction) -> str:
    """Canonical text: `0`, `1`, or reduced `p/q`."""
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"


# Connectives.  Each maps [0,1]-values back into [0,1]; tmul takes an
# arbitrary positive rational multiplier.

def neg(x: Fraction) -> Fraction:
    return ONE - x


def half(x: Fraction) -> Fraction:
    return x / 2


def tsub(x: Fraction, y: Fraction) -> Fraction:
    """Truncated difference max(x - y, 0)."""
    z = x - y
    return z if z > 0 else ZERO


def tadd(x: Fraction, y: Fraction) -> Fraction:
    """Truncated sum min(x + y, 1)."""
    z = x + y
    return z if z < 1 else ONE


def tmul(q: Fraction, x: Fraction) -> Fraction:
    """Truncated scalar product min(q * x, 1)."""
    z = q * x
    return z if z < 1 else ONE


def absdiff(x: Fraction, y: Fraction) -> Fraction:
    return abs(x - y)


def cmp(a: Fraction, b: Fraction) -> Cmp:
    """Exact three-way comparison."""
    if a < b:
        return Cmp.LT
    if a > b:
        return Cmp.GT
    return Cmp.EQ


_CONNECTIVES = {
    "neg": (1, neg),
    "half": (1, half),
    "tsub": (2, tsub),
    "tadd": (2, tadd),
    "min": (2, min),
    "max": (2, max),
    "absdiff": (2, absdiff),
}


def connective_eval(kind: str, args: list[Fraction]) -> Fraction:
    """Apply a named connective to checked arguments.

    `tmul` expects [q, x] where q may exceed 1; every other argument must
    lie in [0, 1].  Unknown kind or wrong arity raises UsageError.
    """
    if kind == "tmul":
        if len(args) != 2:
            raise UsageError("tmul expects 2 arguments")
        q, x = args
        if q <= 0:
            raise UsageError("tmul multiplier must be positive")
        return tmul(q, check_rat01(x))
    try:
        arity, fn = _CONNECTIVES[kind]
    except KeyError:
        raise UsageError(f"unknown connective {kind!r}") from None
    if len(args) != arity:
        raise UsageError(f"{kind} expects {arity} argument(s), got {len(args)}")
    return fn(*(check_rat01(a) for a in args))
