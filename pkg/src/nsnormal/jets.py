"""Truncated polynomial jet maps of R^d fixing the origin.

Coordinates split into blocks ``E_1 .. E_m``; the first ``m_s`` blocks are the
stable coordinates ``x``, the rest the transversal coordinates ``y``.  A jet is
kept modulo the ideal generated by monomials of total degree ``> D`` and of
y-degree ``> ell``.  Both gradings are respected by composition as long as the
y-components of the inner map vanish on ``y = 0``, which every ``JetMap``
guarantees, so truncated composition is a well defined quotient operation.

A ``JetMap`` stores a ``d x d`` linear part plus a sparse table of nonlinear
coefficients keyed by slot ``(component, exponents)``.  Indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from numbers import Rational
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import scalars as sc
from .errors import (
    DegenerateGrid,
    NonPositiveScale,
    ShapeMismatch,
    SingularLinear,
    SlotViolation,
    StableLeak,
)

Exponent = tuple[int, ...]
Slot = tuple[int, Exponent]


@dataclass(frozen=True)
class BlockStructure:
    """Block dimensions ``d_1..d_m``; the first ``m_s`` blocks are stable."""

    dims: tuple[int, ...]
    m_s: int

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(k) for k in self.dims))
        if not self.dims or any(k < 1 for k in self.dims):
            raise ValueError(f"block dimensions must be >= 1, got {self.dims}")
        if not 1 <= self.m_s <= len(self.dims):
            raise ValueError(f"m_s must lie in 1..{len(self.dims)}, got {self.m_s}")

    @property
    def m(self) -> int:
        return len(self.dims)

    @property
    def d(self) -> int:
        return sum(self.dims)

    @property
    def d_s(self) -> int:
        return sum(self.dims[: self.m_s])

    @cached_property
    def block_of(self) -> tuple[int, ...]:
        return tuple(k for k, dk in enumerate(self.dims) for _ in range(dk))

    @cached_property
    def block_vars(self) -> tuple[tuple[int, ...], ...]:
        out, start = [], 0
        for dk in self.dims:
            out.append(tuple(range(start, start + dk)))
            start += dk
        return tuple(out)

    @property
    def x_vars(self) -> range:
        return range(self.d_s)

    @property
    def y_vars(self) -> range:
        return range(self.d_s, self.d)

    def is_stable_component(self, i: int) -> bool:
        return i < self.d_s

    def block_degrees(self, alpha: Exponent) -> tuple[int, ...]:
        n = [0] * self.m
        for j, a in enumerate(alpha):
            n[self.block_of[j]] += a
        return tuple(n)

    def y_degree(self, alpha: Exponent) -> int:
        return sum(alpha[self.d_s:])

    def x_degree(self, alpha: Exponent) -> int:
        return sum(alpha[: self.d_s])

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "m_s": self.m_s}

    @classmethod
    def from_dict(cls, data: Mapping) -> "BlockStructure":
        return cls(tuple(data["dims"]), int(data["m_s"]))


@dataclass(frozen=True)
class TruncationOrder:
    """Keep monomials with y-degree ``<= ell`` and total degree ``<= D``."""

    ell: int
    D: int

    def __post_init__(self):
        if self.ell < 0:
            raise ValueError("ell must be >= 0")
        if self.D < 2:
            raise ValueError("D must be >= 2")
        if self.D < self.ell:
            raise ValueError("D must be >= ell")

    def to_dict(self) -> dict:
        return {"ell": self.ell, "D": self.D}

    @classmethod
    def from_dict(cls, data: Mapping) -> "TruncationOrder":
        return cls(int(data["ell"]), int(data["D"]))


def _compositions(deg: int, d: int) -> Iterator[Exponent]:
    """Exponent vectors of total degree ``deg`` in lex-descending order."""
    if d == 1:
        yield (deg,)
        return
    for first in range(deg, -1, -1):
        for rest in _compositions(deg - first, d - 1):
            yield (first,) + rest


class MonomialIndex:
    """Enumerates the monomials of a truncation region in canonical order.

    Canonical order is graded (total degree ascending) then lex-descending,
    so ``x0^2 < x0*x1 < x1^2``.  Products are looked up in ``table``; an entry
    of ``-1`` means the product falls outside the region.
    """

    def __init__(self, blocks: BlockStructure, trunc: TruncationOrder):
        d, ds = blocks.d, blocks.d_s
        exps = [
            alpha
            for deg in range(trunc.D + 1)
            for alpha in _compositions(deg, d)
            # variables stay indexed even at ell = 0, where they only carry the linear part
            if sum(alpha[ds:]) <= trunc.ell or deg == 1
        ]
        self.exps: list[Exponent] = exps
        self.index: dict[Exponent, int] = {a: i for i, a in enumerate(exps)}
        self.deg = [sum(a) for a in exps]
        self.ydeg = [sum(a[ds:]) for a in exps]
        self.var = [self.index[tuple(int(i == j) for i in range(d))] for j in range(d)]
        self.var_of = {v: j for j, v in enumerate(self.var)}
        get = self.index.get
        self.table = [[get(tuple(p + q for p, q in zip(a, b)), -1) for b in exps] for a in exps]
        # parent[i] = (j, index of alpha - e_j) with j the first variable present
        parent: list[tuple[int, int] | None] = [None]
        for a in exps[1:]:
            j = next(k for k, e in enumerate(a) if e)
            b = list(a)
            b[j] -= 1
            parent.append((j, self.index[tuple(b)]))
        self.parent = parent

    def __len__(self) -> int:
        return len(self.exps)


@lru_cache(maxsize=64)
def monomial_index(blocks: BlockStructure, trunc: TruncationOrder) -> MonomialIndex:
    return MonomialIndex(blocks, trunc)


# ---------------------------------------------------------------------------
# sparse polynomials on a MonomialIndex: dict[int, scalar]


def _pmul(a: dict, b: dict, idx: MonomialIndex, D: int) -> dict:
    if not a or not b:
        return {}
    deg, table = idx.deg, idx.table
    b_sorted = sorted(b.items())  # index order is degree order
    out: dict = {}
    for i, ca in a.items():
        budget = D - deg[i]
        row = table[i]
        for j, cb in b_sorted:
            if deg[j] > budget:
                break
            k = row[j]
            if k >= 0:
                v = ca * cb
                out[k] = out[k] + v if k in out else v
    return {k: v for k, v in out.items() if v}


def _paxpy(out: dict, c, a: dict) -> None:
    """out += c * a (in place)."""
    for k, v in a.items():
        w = c * v
        out[k] = out[k] + w if k in out else w


def _prune(p: dict) -> dict:
    return {k: v for k, v in p.items() if v}


class JetMap:
    """A truncated polynomial map ``v -> linear @ v + (nonlinear terms)``.

    Instances are immutable. Use :func:`make_jet` to build validated maps; the
    arithmetic helpers below keep the invariants by construction.
    """

    __slots__ = ("blocks", "trunc", "mode", "linear", "_terms", "__weakref__")

    def __init__(self, blocks, trunc, mode, linear, terms):
        self.blocks: BlockStructure = blocks
        self.trunc: TruncationOrder = trunc
        self.mode: str = mode
        self.linear: sc.Matrix = linear
        self._terms: tuple[dict, ...] = tuple(terms)

    # -- structure ---------------------------------------------------------
    @property
    def d(self) -> int:
        return self.blocks.d

    @property
    def index(self) -> MonomialIndex:
        return monomial_index(self.blocks, self.trunc)

    def items(self) -> Iterator[tuple[int, Exponent, object]]:
        """Nonlinear coefficients in canonical slot order."""
        exps = self.index.exps
        for k, terms in enumerate(self._terms):
            for i in sorted(terms):
                yield k, exps[i], terms[i]

    @property
    def coeffs(self) -> dict[Slot, object]:
        return {(k, a): v for k, a, v in self.items()}

    def coefficient(self, comp: int, alpha: Sequence[int]):
        i = self.index.index.get(tuple(alpha))
        if i is None:
            return sc.zero(self.mode)
        return self._terms[comp].get(i, sc.zero(self.mode))

    @property
    def n_terms(self) -> int:
        return sum(len(t) for t in self._terms)

    @property
    def is_linear(self) -> bool:
        return not any(self._terms)

    @property
    def has_zero_linear_part(self) -> bool:
        return sc.is_zero(self.linear)

    def slots(self) -> list[Slot]:
        return [(k, a) for k, a, _ in self.items()]

    # -- derived maps --------------------------------------------------------
    def _like(self, linear, terms) -> "JetMap":
        return JetMap(self.blocks, self.trunc, self.mode, linear, terms)

    def nonlinear_part(self) -> "JetMap":
        return self._like(sc.zeros(self.d, self.mode), [dict(t) for t in self._terms])

    def linear_jet(self) -> "JetMap":
        return self._like(self.linear, [{} for _ in range(self.d)])

    def with_linear(self, linear) -> "JetMap":
        return self._like(sc.as_matrix(linear, self.mode, self.d), [dict(t) for t in self._terms])

    def degree_part(self, delta: int) -> "JetMap":
        """Nonlinear terms of total degree exactly ``delta`` (zero linear part)."""
        deg = self.index.deg
        return self._like(sc.zeros(self.d, self.mode),
                          [{i: v for i, v in t.items() if deg[i] == delta} for t in self._terms])

    def filter_slots(self, keep: Callable[[int, Exponent], bool]) -> "JetMap":
        exps = self.index.exps
        return self._like(self.linear,
                          [{i: v for i, v in t.items() if keep(k, exps[i])}
                           for k, t in enumerate(self._terms)])

    def map_coeffs(self, fn: Callable[[int, Exponent, object], object]) -> "JetMap":
        exps = self.index.exps
        return self._like(self.linear,
                          [_prune({i: fn(k, exps[i], v) for i, v in t.items()})
                           for k, t in enumerate(self._terms)])

    def to_mode(self, mode: str) -> "JetMap":
        sc.check_mode(mode)
        if mode == self.mode:
            return self
        conv = lambda v: sc.coerce(v, mode)  # noqa: E731
        return JetMap(self.blocks, self.trunc, mode,
                      tuple(tuple(conv(v) for v in row) for row in self.linear),
                      [_prune({i: conv(v) for i, v in t.items()}) for t in self._terms])

    # -- vector space operations ----------------------------------------------
    def _check_same(self, other: "JetMap") -> None:
        if not isinstance(other, JetMap):
            raise TypeError(f"expected JetMap, got {type(other).__name__}")
        if (self.blocks, self.trunc, self.mode) != (other.blocks, other.trunc, other.mode):
            raise ShapeMismatch(
                f"incompatible jets: {self.blocks}/{self.trunc}/{self.mode} vs "
                f"{other.blocks}/{other.trunc}/{other.mode}")

    def __add__(self, other: "JetMap") -> "JetMap":
        self._check_same(other)
        lin = tuple(tuple(a + b for a, b in zip(r, s)) for r, s in zip(self.linear, other.linear))
        terms = []
        for t, u in zip(self._terms, other._terms):
            acc = dict(t)
            _paxpy(acc, 1, u)
            terms.append(_prune(acc))
        return self._like(lin, terms)

    def __neg__(self) -> "JetMap":
        return self.scaled(-1)

    def __sub__(self, other: "JetMap") -> "JetMap":
        return self + (-other)

    def scaled(self, c) -> "JetMap":
        c = sc.coerce(c, self.mode)
        return self._like(sc.scale(self.linear, c),
                          [_prune({i: c * v for i, v in t.items()}) for t in self._terms])

    def __eq__(self, other) -> bool:
        if not isinstance(other, JetMap):
            return NotImplemented
        return ((self.blocks, self.trunc, self.mode) == (other.blocks, other.trunc, other.mode)
                and self.linear == other.linear and self._terms == other._terms)

    __hash__ = None  # type: ignore[assignment]

    def __call__(self, point: Sequence) -> tuple:
        return evaluate(self, point)

    def __repr__(self) -> str:
        names = [f"x{j}" for j in range(self.d)]
        comps = []
        for k in range(self.d):
            parts = [f"{self.linear[k][j]}*{names[j]}" for j in range(self.d) if self.linear[k][j]]
            for i in sorted(self._terms[k]):
                a = self.index.exps[i]
                mono = "*".join(f"{names[j]}^{e}" if e > 1 else names[j]
                                for j, e in enumerate(a) if e)
                parts.append(f"{self._terms[k][i]}*{mono}")
            comps.append(" + ".join(parts) or "0")
        return (f"JetMap(dims={self.blocks.dims}, m_s={self.blocks.m_s}, ell={self.trunc.ell}, "
                f"D={self.trunc.D}, {self.mode}; [{'; '.join(comps)}])")

    # internal access for sibling modules
    def component_poly(self, k: int) -> dict:
        """Full polynomial of component ``k`` keyed by monomial index (linear included)."""
        var = self.index.var
        p = {var[j]: v for j, v in enumerate(self.linear[k]) if v}
        p.update(self._terms[k])
        return p


# ---------------------------------------------------------------------------
# construction


def _check_linear(blocks: BlockStructure, linear: sc.Matrix, mode: str, require_invertible: bool):
    ds = blocks.d_s
    for r in range(ds, blocks.d):
        if any(linear[r][c] != 0 for c in range(ds)):
            raise StableLeak("linear part maps the stable subspace outside itself")
    if require_invertible and not sc.is_invertible(linear, mode):
        raise SingularLinear("linear part is not invertible")


def make_jet(
    blocks: BlockStructure,
    trunc: TruncationOrder,
    linear=None,
    entries: Iterable = (),
    *,
    mode: str = sc.RATIONAL,
    strict: bool = True,
    require_invertible: bool = True,
) -> JetMap:
    """Build a validated jet.

    ``entries`` holds ``((comp, alpha), value)`` or ``(comp, alpha, value)``
    items; repeated slots accumulate.  ``linear=None`` means the identity.
    Out-of-region slots raise ``SlotViolation`` when ``strict`` and are dropped
    otherwise.  Pass ``require_invertible=False`` for offset maps such as the
    ``p`` in ``Id + p``.
    """
    sc.check_mode(mode)
    d = blocks.d
    lin = sc.identity(d, mode) if linear is None else sc.as_matrix(linear, mode, d)
    _check_linear(blocks, lin, mode, require_invertible)
    idx = monomial_index(blocks, trunc)
    terms: list[dict] = [{} for _ in range(d)]
    for item in entries:
        if len(item) == 2:
            (comp, alpha), value = item
        else:
            comp, alpha, value = item
        alpha = tuple(int(a) for a in alpha)
        comp = int(comp)
        if not 0 <= comp < d or len(alpha) != d or any(a < 0 for a in alpha):
            raise SlotViolation(f"malformed slot {(comp, alpha)} for d={d}")
        deg = sum(alpha)
        if deg == 0:
            raise SlotViolation("constant terms are not allowed (maps fix the origin)")
        if deg == 1:
            raise SlotViolation("degree-1 terms belong in the linear part")
        if not blocks.is_stable_component(comp) and blocks.y_degree(alpha) == 0:
            raise SlotViolation(
                f"pure-x monomial {alpha} in transversal component {comp} (must vanish on y=0)")
        i = idx.index.get(alpha)
        if i is None:
            if strict:
                raise SlotViolation(f"slot {(comp, alpha)} lies outside truncation {trunc}")
            continue
        v = sc.coerce(value, mode)
        t = terms[comp]
        t[i] = t[i] + v if i in t else v
    return JetMap(blocks, trunc, mode, lin, [_prune(t) for t in terms])


def identity(blocks: BlockStructure, trunc: TruncationOrder, mode: str = sc.RATIONAL) -> JetMap:
    return JetMap(blocks, trunc, mode, sc.identity(blocks.d, mode), [{} for _ in range(blocks.d)])


def zero_map(blocks: BlockStructure, trunc: TruncationOrder, mode: str = sc.RATIONAL) -> JetMap:
    return JetMap(blocks, trunc, mode, sc.zeros(blocks.d, mode), [{} for _ in range(blocks.d)])


def linear_map(blocks: BlockStructure, trunc: TruncationOrder, matrix,
               mode: str = sc.RATIONAL) -> JetMap:
    lin = sc.as_matrix(matrix, mode, blocks.d)
    _check_linear(blocks, lin, mode, require_invertible=False)
    return JetMap(blocks, trunc, mode, lin, [{} for _ in range(blocks.d)])


def offset(blocks: BlockStructure, trunc: TruncationOrder, entries: Iterable = (), *,
           mode: str = sc.RATIONAL, strict: bool = True) -> JetMap:
    """A purely nonlinear map ``p`` (zero linear part)."""
    return make_jet(blocks, trunc, sc.zeros(blocks.d, mode), entries, mode=mode,
                    strict=strict, require_invertible=False)


def add_identity(a: JetMap) -> JetMap:
    """``Id + a``."""
    return a + identity(a.blocks, a.trunc, a.mode)


def sub_identity(a: JetMap) -> JetMap:
    """``a - Id``."""
    return a - identity(a.blocks, a.trunc, a.mode)


def truncate(a: JetMap, trunc: TruncationOrder) -> JetMap:
    """Re-express ``a`` in another truncation region, dropping what falls outside."""
    if trunc == a.trunc:
        return a
    src = a.index
    dst = monomial_index(a.blocks, trunc)
    terms = []
    for t in a._terms:
        new = {}
        for i, v in t.items():
            j = dst.index.get(src.exps[i])
            if j is not None:
                new[j] = v
        terms.append(new)
    return JetMap(a.blocks, trunc, a.mode, a.linear, terms)


# ---------------------------------------------------------------------------
# algebra


def compose(outer: JetMap, inner: JetMap) -> JetMap:
    """Truncated jet of ``outer o inner``."""
    outer._check_same(inner)
    idx = inner.index
    D = inner.trunc.D
    d = inner.d
    comps = [inner.component_poly(j) for j in range(d)]
    parent = idx.parent
    deg = idx.deg
    cache: dict[int, dict] = {}

    def mono(i: int) -> dict:
        r = cache.get(i)
        if r is None:
            j, p = parent[i]
            r = comps[j] if deg[p] == 0 else _pmul(mono(p), comps[j], idx, D)
            cache[i] = r
        return r

    var_of = idx.var_of
    z = sc.zero(outer.mode)
    lin = [[z] * d for _ in range(d)]
    terms = []
    for k in range(d):
        acc: dict = {}
        for j, c in enumerate(outer.linear[k]):
            if c:
                _paxpy(acc, c, comps[j])
        for i, c in outer._terms[k].items():
            _paxpy(acc, c, mono(i))
        nl = {}
        for i, v in acc.items():
            if not v:
                continue
            if deg[i] == 1:
                lin[k][var_of[i]] = v
            else:
                nl[i] = v
        terms.append(nl)
    return outer._like(tuple(tuple(r) for r in lin), terms)


def compose_all(*maps: JetMap) -> JetMap:
    """``maps[0] o maps[1] o ... o maps[-1]``."""
    out = maps[-1]
    for m in reversed(maps[:-1]):
        out = compose(m, out)
    return out


def invert(a: JetMap) -> JetMap:
    """Inverse jet, by graded fixed-point recursion.

    Write ``a = (Id + g) o L``.  The inverse of ``Id + g`` is ``Id + k`` with
    ``k = -g o (Id + k)``; iterate from ``k = 0``, each pass fixing one more
    total degree, so ``D - 1`` passes are exact.
    """
    lin_inv = sc.inverse(a.linear, a.mode)
    Linv = linear_map(a.blocks, a.trunc, lin_inv, a.mode)
    g = sub_identity(compose(a, Linv))
    ident = identity(a.blocks, a.trunc, a.mode)
    k = zero_map(a.blocks, a.trunc, a.mode)
    for _ in range(a.trunc.D - 1):
        k = -compose(g, ident + k)
    return compose(Linv, ident + k)


def _diag_monomial_factors(idx: MonomialIndex, diag: Sequence) -> list:
    """prod_j diag[j]**alpha_j for every monomial of the index."""
    out = [1] * len(idx)
    for i in range(1, len(idx)):
        j, p = idx.parent[i]
        out[i] = out[p] * diag[j]
    return out


def conjugate_linear(a: JetMap, L) -> JetMap:
    """``L^{-1} o a o L`` for an invertible matrix ``L``."""
    mode = a.mode
    Lm = _matrix_of(L, a)
    if sc.is_diagonal(Lm):
        diag = [Lm[j][j] for j in range(a.d)]
        if any(v == 0 for v in diag):
            raise SingularLinear("conjugating matrix is singular")
        fac = _diag_monomial_factors(a.index, diag)
        inv = [1 / v for v in diag]
        lin = tuple(tuple(a.linear[k][j] * diag[j] * inv[k] for j in range(a.d))
                    for k in range(a.d))
        terms = [_prune({i: v * fac[i] * inv[k] for i, v in t.items()})
                 for k, t in enumerate(a._terms)]
        return a._like(lin, terms)
    Linv = sc.inverse(Lm, mode)
    return compose_all(linear_map(a.blocks, a.trunc, Linv, mode), a,
                       linear_map(a.blocks, a.trunc, Lm, mode))


def _matrix_of(L, like: JetMap) -> sc.Matrix:
    if isinstance(L, JetMap):
        return L.linear
    mat = getattr(L, "matrix", L)
    return sc.as_matrix(mat, like.mode, like.d)


def rescale(a: JetMap, lam) -> JetMap:
    """``Lambda o a o Lambda^{-1}`` with ``Lambda = lam * Id``.

    A degree-``delta`` coefficient is multiplied by ``lam**(1 - delta)``.
    """
    if not lam > 0:
        raise NonPositiveScale(f"rescale factor must be positive, got {lam}")
    lam = sc.coerce(lam, a.mode)
    deg = a.index.deg
    inv = 1 / lam
    pw = [sc.one(a.mode)]
    for _ in range(a.trunc.D):
        pw.append(pw[-1] * inv)
    return a._like(a.linear, [{i: v * pw[deg[i] - 1] for i, v in t.items()} for t in a._terms])


def _coerce_point(a: JetMap, point: Sequence) -> list:
    if len(point) != a.d:
        raise ShapeMismatch(f"point has {len(point)} entries, expected {a.d}")
    if a.mode == sc.RATIONAL and all(isinstance(v, (int, Rational)) for v in point):
        return [sc.coerce(v, sc.RATIONAL) for v in point]
    return [float(v) for v in point]


def evaluate(a: JetMap, point: Sequence) -> tuple:
    """Polynomial value at ``point`` (exact for rational jets at rational points)."""
    v = _coerce_point(a, point)
    exact = not isinstance(v[0], float)
    idx = a.index
    vals = [1] * len(idx)
    for i in range(1, len(idx)):
        j, p = idx.parent[i]
        vals[i] = vals[p] * v[j]
    out = []
    for k in range(a.d):
        row = a.linear[k] if exact else [float(c) for c in a.linear[k]]
        s = sum((c * x for c, x in zip(row, v) if c), 0)
        for i, c in a._terms[k].items():
            s += (c if exact else float(c)) * vals[i]
        out.append(s if exact else float(s))
    return tuple(out)


def coeff_norm(a: JetMap, weights=None):
    """Weighted max of nonlinear coefficient magnitudes.

    ``weights`` may be ``None`` (all 1), a mapping from total degree to weight,
    a mapping from slot ``(comp, alpha)`` to weight, or a callable
    ``(comp, alpha) -> weight``.  Missing keys weigh 1.
    """
    best = sc.zero(a.mode)
    exps, deg = a.index.exps, a.index.deg
    weight = _weight_fn(weights, a.mode)
    for k, t in enumerate(a._terms):
        for i, v in t.items():
            w = abs(v) if weight is None else abs(v) * weight(k, exps[i], deg[i])
            if w > best:
                best = w
    return best


def _weight_fn(weights, mode):
    if weights is None:
        return None
    one = sc.one(mode)
    if callable(weights):
        return lambda k, a, dg: sc.coerce(weights(k, a), mode)
    wmap = dict(weights)
    if all(isinstance(key, int) for key in wmap):
        conv = {key: sc.coerce(w, mode) for key, w in wmap.items()}
        return lambda k, a, dg: conv.get(dg, one)
    conv = {(int(key[0]), tuple(key[1])): sc.coerce(w, mode) for key, w in wmap.items()}
    return lambda k, a, dg: conv.get((k, a), one)


def ray_residual_order(a, b, direction: Sequence, t_grid: Sequence, *, exact: bool | None = None
                       ) -> float:
    """Fitted exponent of ``||a(t*dir) - b(t*dir)||`` as ``t -> 0``.

    ``a`` and ``b`` are jets or callables on d-vectors.  For two jets the
    difference jet is evaluated directly, which avoids cancellation.  With
    ``exact`` (default for rational jets) the ray points are built from the
    decimal renderings of ``t_grid`` as exact rationals.  Returns ``math.inf``
    when the residual vanishes on the whole grid.
    """
    ts = [float(t) for t in t_grid]
    if len(ts) < 4:
        raise DegenerateGrid("t_grid needs at least 4 points")
    if any(t <= 0 for t in ts) or any(nxt >= cur for cur, nxt in zip(ts, ts[1:])):
        raise DegenerateGrid("t_grid must be positive and strictly decreasing")
    if not any(float(c) != 0 for c in direction):
        raise DegenerateGrid("direction must be nonzero")
    both_jets = isinstance(a, JetMap) and isinstance(b, JetMap)
    if exact is None:
        exact = both_jets and a.mode == sc.RATIONAL
    if exact:
        dir_ = [Fraction(str(c)) if isinstance(c, float) else Fraction(c) for c in direction]
        points = [[Fraction(str(t)) * c for c in dir_] for t in t_grid]
    else:
        points = [[t * float(c) for c in direction] for t in ts]

    if both_jets:
        diff = a - b
        residual = lambda p: diff(p)  # noqa: E731
    else:
        fa = a if callable(a) else None
        fb = b if callable(b) else None
        if fa is None or fb is None:
            raise TypeError("a and b must be JetMaps or callables")
        residual = lambda p: [x - y for x, y in zip(fa(p), fb(p))]  # noqa: E731

    logs_t, logs_r = [], []
    for t, p in zip(ts, points):
        r = residual(p)
        norm = math.sqrt(sum(float(x) ** 2 for x in r)) if not exact else _exact_norm(r)
        if norm > 0:
            logs_t.append(math.log(t))
            logs_r.append(math.log(norm))
    if not logs_t:
        return math.inf
    if len(logs_t) < 2:
        raise DegenerateGrid("fewer than two nonzero residuals on the grid")
    slope, _ = np.polyfit(logs_t, logs_r, 1)
    return float(slope)


def _exact_norm(r) -> float:
    # log-safe Euclidean norm of possibly tiny exact values
    sq = sum((Fraction(int(x.numerator), int(x.denominator)) if hasattr(x, "numerator")
              else Fraction(x)) ** 2 for x in r)
    if sq == 0:
        return 0.0
    return math.exp(0.5 * (math.log(sq.numerator) - math.log(sq.denominator)))


# ---------------------------------------------------------------------------
# serialization


def jet_to_dict(a: JetMap) -> dict:
    """JSON-ready dict with coefficients in canonical slot order."""
    return {
        "blocks": a.blocks.to_dict(),
        "trunc": a.trunc.to_dict(),
        "mode": a.mode,
        "linear": [[sc.render(v, a.mode) for v in row] for row in a.linear],
        "coeffs": [{"comp": k, "alpha": list(alpha), "value": sc.render(v, a.mode)}
                   for k, alpha, v in a.items()],
    }


def jet_from_dict(data: Mapping, *, require_invertible: bool = False) -> JetMap:
    blocks = BlockStructure.from_dict(data["blocks"])
    trunc = TruncationOrder.from_dict(data["trunc"])
    mode = data.get("mode", sc.RATIONAL)
    entries = [(c["comp"], c["alpha"], c["value"]) for c in data.get("coeffs", [])]
    return make_jet(blocks, trunc, data["linear"], entries, mode=mode,
                    require_invertible=require_invertible)


def coeffs_to_list(a: JetMap) -> list[dict]:
    return jet_to_dict(a)["coeffs"]
