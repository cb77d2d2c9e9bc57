"""Exact real numbers of the form ``c0 + sum_p c_p * log(p)``.

Lyapunov exponents are declared as rational multiples of logarithms of
positive rationals (``-log 2``, ``log 3 - 2 log 2`` ...).  Bases are factored
into primes, which makes the representation canonical: logs of distinct primes
are linearly independent over Q, and ``c0 + log(A) = 0`` with ``c0 != 0`` is
impossible for algebraic ``A`` (Hermite-Lindemann).  Hence a value is zero iff
all its coefficients vanish, and its sign is decided exactly: by an integer
power comparison when ``c0 = 0``, otherwise by interval evaluation with
escalating precision, which must terminate because the value is nonzero.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from functools import total_ordering
from typing import Mapping

import mpmath
from sympy import factorint

_UNIT_RE = re.compile(r"^(?:log|ln)\s*\(?\s*(\d+(?:/\d+)?)\s*\)?$")
_PLAIN_UNITS = {"1", "", "one", "const"}


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, float):
        return Fraction(str(x))
    if hasattr(x, "numerator"):
        return Fraction(int(x.numerator), int(x.denominator))
    return Fraction(x)


@total_ordering
class LogValue:
    """Immutable exact value ``const + sum(coef * log(prime))``."""

    __slots__ = ("terms", "const", "_hash")

    def __init__(self, terms: Mapping[int, Fraction] | None = None, const=0):
        clean = {int(p): _frac(c) for p, c in (terms or {}).items() if _frac(c) != 0}
        self.terms: tuple[tuple[int, Fraction], ...] = tuple(sorted(clean.items()))
        self.const: Fraction = _frac(const)
        self._hash = hash((self.terms, self.const))

    # -- construction ------------------------------------------------------------
    @classmethod
    def log(cls, base, coef=1) -> "LogValue":
        """``coef * log(base)`` for a positive rational ``base``."""
        r = _frac(base)
        if r <= 0:
            raise ValueError(f"log base must be positive, got {base}")
        c = _frac(coef)
        terms: dict[int, Fraction] = {}
        for p, e in factorint(r.numerator).items():
            terms[p] = terms.get(p, Fraction(0)) + c * e
        for p, e in factorint(r.denominator).items():
            terms[p] = terms.get(p, Fraction(0)) - c * e
        return cls(terms)

    @classmethod
    def rational(cls, value) -> "LogValue":
        return cls({}, value)

    @classmethod
    def from_units(cls, units: Mapping[str, object]) -> "LogValue":
        """Parse ``{"log2": "-1", "log3/2": "1/2", "1": "1/10"}``."""
        out = cls()
        for key, coef in units.items():
            k = str(key).strip()
            if k in _PLAIN_UNITS:
                out = out + cls.rational(coef)
                continue
            m = _UNIT_RE.match(k)
            if not m:
                raise ValueError(f"unrecognised exponent unit {key!r}; use e.g. 'log2' or '1'")
            out = out + cls.log(m.group(1), coef)
        return out

    @classmethod
    def coerce(cls, x) -> "LogValue":
        if isinstance(x, LogValue):
            return x
        if isinstance(x, Mapping):
            return cls.from_units(x.get("units", x))
        return cls.rational(x)

    def to_units(self) -> dict[str, str]:
        out = {f"log{p}": str(c) for p, c in self.terms}
        if self.const:
            out["1"] = str(self.const)
        return out

    # -- arithmetic ---------------------------------------------------------------
    def __add__(self, other) -> "LogValue":
        other = LogValue.coerce(other)
        terms = dict(self.terms)
        for p, c in other.terms:
            terms[p] = terms.get(p, Fraction(0)) + c
        return LogValue(terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "LogValue":
        return LogValue({p: -c for p, c in self.terms}, -self.const)

    def __sub__(self, other) -> "LogValue":
        return self + (-LogValue.coerce(other))

    def __rsub__(self, other) -> "LogValue":
        return LogValue.coerce(other) - self

    def __mul__(self, k) -> "LogValue":
        if isinstance(k, LogValue):
            raise TypeError("products of logarithms are not log-linear")
        k = _frac(k)
        return LogValue({p: c * k for p, c in self.terms}, self.const * k)

    __rmul__ = __mul__

    def __truediv__(self, k) -> "LogValue":
        return self * (1 / _frac(k))

    def __abs__(self) -> "LogValue":
        return -self if self.sign() < 0 else self

    # -- comparison -----------------------------------------------------------------
    def is_zero(self) -> bool:
        return not self.terms and self.const == 0

    def sign(self) -> int:
        if self.is_zero():
            return 0
        if not self.terms:
            return 1 if self.const > 0 else -1
        if self.const == 0:
            q = math.lcm(*(c.denominator for _, c in self.terms))
            num = den = 1
            for p, c in self.terms:
                e = int(c * q)
                if e > 0:
                    num *= p ** e
                else:
                    den *= p ** (-e)
            return 1 if num > den else -1
        return self._numeric_sign()

    def _numeric_sign(self) -> int:
        dps = 30
        while dps <= 20000:
            with mpmath.workdps(dps):
                v = self._mpf()
                if abs(v) > mpmath.mpf(10) ** (-(dps - 10)):
                    return 1 if v > 0 else -1
            dps *= 2
        raise ArithmeticError(f"could not resolve the sign of {self!r}")

    def _mpf(self):
        v = mpmath.mpf(self.const.numerator) / self.const.denominator
        for p, c in self.terms:
            v += mpmath.mpf(c.numerator) / c.denominator * mpmath.log(p)
        return v

    def __eq__(self, other) -> bool:
        try:
            other = LogValue.coerce(other)
        except (TypeError, ValueError):
            return NotImplemented
        return self.terms == other.terms and self.const == other.const

    def __hash__(self) -> int:
        return self._hash

    def __lt__(self, other) -> bool:
        return (self - LogValue.coerce(other)).sign() < 0

    def __float__(self) -> float:
        with mpmath.workdps(40):
            return float(self._mpf())

    def exp_rational(self) -> Fraction | None:
        """``exp(self)`` when it is rational (integer prime exponents, no constant)."""
        if self.const or any(c.denominator != 1 for _, c in self.terms):
            return None
        out = Fraction(1)
        for p, c in self.terms:
            out *= Fraction(p) ** int(c)
        return out

    def exp_mpf(self, dps: int = 40):
        with mpmath.workdps(dps):
            return mpmath.exp(self._mpf())

    def __repr__(self) -> str:
        parts = [f"{c}*log{p}" for p, c in self.terms]
        if self.const or not parts:
            parts.append(str(self.const))
        return "LogValue(" + " + ".join(parts) + ")"


ZERO = LogValue()


def log2_units(*coefs) -> tuple[LogValue, ...]:
    """Convenience: values ``c * log 2`` for each coefficient."""
    return tuple(LogValue.log(2, c) for c in coefs)
