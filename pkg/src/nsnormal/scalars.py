"""Scalar modes and small dense matrix helpers.

Two arithmetic modes exist: ``"rational"`` (exact, backed by ``gmpy2.mpq``)
and ``"float"`` (IEEE doubles). A computation never mixes them; values are
coerced into the mode of the object that owns them.
"""

from __future__ import annotations

from fractions import Fraction
from numbers import Rational
from typing import Sequence

import gmpy2

from .errors import ShapeMismatch, SingularLinear

RATIONAL = "rational"
FLOAT = "float"
MODES = (RATIONAL, FLOAT)

Matrix = tuple[tuple, ...]


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown arithmetic mode {mode!r}; expected one of {MODES}")
    return mode


def coerce(x, mode: str):
    """Convert ``x`` (int, Fraction, mpq, float or numeric string) into ``mode``."""
    if mode == RATIONAL:
        if isinstance(x, str):
            return gmpy2.mpq(x.strip())
        if isinstance(x, float):
            # exact binary value of the double
            return gmpy2.mpq(Fraction(x))
        return gmpy2.mpq(x)
    if isinstance(x, str):
        s = x.strip()
        return float(Fraction(s)) if "/" in s else float(s)
    return float(x)


def render(x, mode: str) -> str:
    """Lossless text form: ``"p/q"`` in rational mode, shortest repr in float mode."""
    if mode == RATIONAL:
        return str(gmpy2.mpq(x))
    return repr(float(x))


def is_rational_value(x) -> bool:
    return isinstance(x, (int, Rational)) or type(x) is type(gmpy2.mpq(0))


def zero(mode: str):
    return gmpy2.mpq(0) if mode == RATIONAL else 0.0


def one(mode: str):
    return gmpy2.mpq(1) if mode == RATIONAL else 1.0


def to_fraction(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(x)
    return Fraction(int(x.numerator), int(x.denominator)) if hasattr(x, "numerator") else Fraction(x)


# ---------------------------------------------------------------------------
# matrices (tuples of row tuples)


def as_matrix(rows: Sequence[Sequence], mode: str, size: int | None = None) -> Matrix:
    out = tuple(tuple(coerce(v, mode) for v in row) for row in rows)
    n = len(out)
    if size is not None and n != size:
        raise ShapeMismatch(f"expected a {size}x{size} matrix, got {n} rows")
    if any(len(row) != n for row in out):
        raise ShapeMismatch("matrix must be square")
    return out


def identity(n: int, mode: str) -> Matrix:
    o, z = one(mode), zero(mode)
    return tuple(tuple(o if i == j else z for j in range(n)) for i in range(n))


def zeros(n: int, mode: str) -> Matrix:
    z = zero(mode)
    return tuple((z,) * n for _ in range(n))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    n = len(a)
    cols = list(zip(*b))
    return tuple(tuple(sum((a[i][k] * cols[j][k] for k in range(n) if a[i][k]), a[i][0] * 0)
                       for j in range(n)) for i in range(n))


def matvec(a: Matrix, v: Sequence) -> list:
    return [sum((row[j] * v[j] for j in range(len(v)) if row[j]), row[0] * 0) for row in a]


def scale(a: Matrix, c) -> Matrix:
    return tuple(tuple(c * v for v in row) for row in a)


def is_identity(a: Matrix) -> bool:
    return all(v == (1 if i == j else 0) for i, row in enumerate(a) for j, v in enumerate(row))


def is_zero(a: Matrix) -> bool:
    return all(v == 0 for row in a for v in row)


def is_diagonal(a: Matrix) -> bool:
    return all(v == 0 for i, row in enumerate(a) for j, v in enumerate(row) if i != j)


def inverse(a: Matrix, mode: str) -> Matrix:
    """Gauss-Jordan inverse with partial pivoting; exact in rational mode."""
    n = len(a)
    work = [list(row) + list(r) for row, r in zip(a, identity(n, mode))]
    scale_ = max((abs(v) for row in a for v in row), default=0)
    tiny = 0 if mode == RATIONAL else 1e-13 * (scale_ or 1.0)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(work[r][col]))
        if abs(work[piv][col]) <= tiny:
            raise SingularLinear("linear part is not invertible")
        work[col], work[piv] = work[piv], work[col]
        p = work[col][col]
        work[col] = [v / p for v in work[col]]
        for r in range(n):
            if r != col and work[r][col]:
                f = work[r][col]
                work[r] = [v - f * w for v, w in zip(work[r], work[col])]
    return tuple(tuple(row[n:]) for row in work)


def is_invertible(a: Matrix, mode: str) -> bool:
    try:
        inverse(a, mode)
    except SingularLinear:
        return False
    return True


def to_float_rows(a: Matrix) -> list[list[float]]:
    return [[float(v) for v in row] for row in a]
