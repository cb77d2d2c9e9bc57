"""Sub-resonance generated polynomial automorphisms.

Elements are stored factored as ``(Id + p) o B`` with ``p`` supported on PLUS
slots and ``B`` either block diagonal (group Z) or block upper triangular,
i.e. preserving the flag ``E_1 < E_1+E_2 < ...`` (group Z').  Conjugation by
either kind of ``B`` can only raise slot exponents, so PLUS support survives
and the factored form is recovered after every operation.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from . import jets
from . import scalars as sc
from .errors import ClosureViolation, ShapeMismatch, SingularLinear, SlotViolation
from .exponents import LogValue
from .jets import BlockStructure, JetMap, TruncationOrder
from .resonance import ResonanceTable, Side, is_supported, off_side_norm, split_sides

FLOAT_TOL = 1e-10


class LinearKind(enum.Enum):
    DIAGONAL = "DIAGONAL"
    TRIANGULAR = "TRIANGULAR"

    def join(self, other: "LinearKind") -> "LinearKind":
        if self is LinearKind.DIAGONAL and other is LinearKind.DIAGONAL:
            return LinearKind.DIAGONAL
        return LinearKind.TRIANGULAR


class Membership(enum.Enum):
    G_PLUS = "G_PLUS"
    G_PLUS_Z = "G_PLUS_Z"
    G_PLUS_Zprime = "G_PLUS_Zprime"
    G_MINUS = "G_MINUS"
    NONE = "NONE"


def is_block_diagonal(matrix: sc.Matrix, blocks: BlockStructure) -> bool:
    b = blocks.block_of
    return all(v == 0 for r, row in enumerate(matrix) for c, v in enumerate(row) if b[r] != b[c])


def is_flag_preserving(matrix: sc.Matrix, blocks: BlockStructure) -> bool:
    b = blocks.block_of
    return all(v == 0 for r, row in enumerate(matrix) for c, v in enumerate(row) if b[r] > b[c])


@dataclass(frozen=True, eq=False)
class LinearBlockMap:
    matrix: sc.Matrix
    kind: LinearKind
    blocks: BlockStructure
    mode: str = sc.RATIONAL

    def __post_init__(self):
        mat = sc.as_matrix(self.matrix, self.mode, self.blocks.d)
        object.__setattr__(self, "matrix", mat)
        ok = (is_block_diagonal if self.kind is LinearKind.DIAGONAL else is_flag_preserving)
        if not ok(mat, self.blocks):
            raise SlotViolation(f"matrix does not have the {self.kind.value} block pattern")
        if not sc.is_invertible(mat, self.mode):
            raise SingularLinear("linear block map must be invertible")

    @classmethod
    def identity(cls, blocks: BlockStructure, mode: str = sc.RATIONAL) -> "LinearBlockMap":
        return cls(sc.identity(blocks.d, mode), LinearKind.DIAGONAL, blocks, mode)

    @classmethod
    def detect(cls, matrix, blocks: BlockStructure, mode: str = sc.RATIONAL) -> "LinearBlockMap":
        mat = sc.as_matrix(matrix, mode, blocks.d)
        kind = LinearKind.DIAGONAL if is_block_diagonal(mat, blocks) else LinearKind.TRIANGULAR
        return cls(mat, kind, blocks, mode)

    def inverse(self) -> "LinearBlockMap":
        return LinearBlockMap(sc.inverse(self.matrix, self.mode), self.kind, self.blocks, self.mode)

    def __matmul__(self, other: "LinearBlockMap") -> "LinearBlockMap":
        return LinearBlockMap(sc.matmul(self.matrix, other.matrix), self.kind.join(other.kind),
                              self.blocks, self.mode)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinearBlockMap):
            return NotImplemented
        return (self.matrix, self.kind, self.blocks, self.mode) == (
            other.matrix, other.kind, other.blocks, other.mode)

    __hash__ = None  # type: ignore[assignment]

    def is_identity(self) -> bool:
        return sc.is_identity(self.matrix)

    def as_jet(self, trunc: TruncationOrder) -> JetMap:
        return jets.linear_map(self.blocks, trunc, self.matrix, self.mode)


def _plus_tol(mode: str, tol):
    if tol is not None:
        return tol
    return 0 if mode == sc.RATIONAL else FLOAT_TOL


@dataclass(frozen=True, eq=False)
class SubResonanceAut:
    """``Id + p`` with ``p`` PLUS-supported."""

    table: ResonanceTable
    p: JetMap

    def __post_init__(self):
        self.table.check_jet(self.p)
        if not self.p.has_zero_linear_part:
            raise SlotViolation("p must have zero linear part")
        if not is_supported(self.p, Side.PLUS, self.table, _plus_tol(self.p.mode, None)):
            raise ClosureViolation("p has coefficients on MINUS slots")

    def to_jet(self) -> JetMap:
        return jets.add_identity(self.p)


@dataclass(frozen=True, eq=False)
class NormalFormFactor:
    """``(Id + p) o B``: the shape of a normalized cocycle step."""

    aut: SubResonanceAut
    lin: LinearBlockMap

    def __post_init__(self):
        if self.aut.p.blocks != self.lin.blocks or self.aut.p.mode != self.lin.mode:
            raise ShapeMismatch("nonlinear and linear factors disagree on blocks or mode")

    @property
    def table(self) -> ResonanceTable:
        return self.aut.table

    @property
    def p(self) -> JetMap:
        return self.aut.p

    @property
    def trunc(self) -> TruncationOrder:
        return self.aut.p.trunc

    @property
    def mode(self) -> str:
        return self.aut.p.mode

    @classmethod
    def make(cls, table: ResonanceTable, p: JetMap, lin: LinearBlockMap | None = None
             ) -> "NormalFormFactor":
        lin = lin or LinearBlockMap.identity(p.blocks, p.mode)
        return cls(SubResonanceAut(table, p), lin)

    @classmethod
    def identity(cls, table: ResonanceTable, trunc: TruncationOrder, mode: str = sc.RATIONAL
                 ) -> "NormalFormFactor":
        return cls.make(table, jets.zero_map(table.blocks, trunc, mode))

    def to_jet(self) -> JetMap:
        return jets.compose(self.aut.to_jet(), self.lin.as_jet(self.trunc))

    def __eq__(self, other) -> bool:
        if not isinstance(other, NormalFormFactor):
            return NotImplemented
        return self.table == other.table and self.p == other.p and self.lin == other.lin

    __hash__ = None  # type: ignore[assignment]

    def to_dict(self) -> dict:
        return {"p": jets.coeffs_to_list(self.p),
                "linear": [[sc.render(v, self.mode) for v in row] for row in self.lin.matrix],
                "kind": self.lin.kind.value}

    @classmethod
    def from_dict(cls, data: Mapping, table: ResonanceTable, trunc: TruncationOrder,
                  mode: str) -> "NormalFormFactor":
        p = jets.offset(table.blocks, trunc,
                        [(c["comp"], c["alpha"], c["value"]) for c in data["p"]], mode=mode)
        lin = LinearBlockMap(data["linear"], LinearKind(data["kind"]), table.blocks, mode)
        return cls.make(table, p, lin)


def factor_jet(a: JetMap, table: ResonanceTable, *, tol=None) -> NormalFormFactor:
    """Factor ``a = (Id + p) o L`` and check it lies in the semidirect product.

    Raises ``ClosureViolation`` when ``p`` has a MINUS component above ``tol``
    and ``SlotViolation`` when ``L`` is not flag preserving.  In float mode the
    MINUS residue below ``tol`` is dropped.
    """
    table.check_jet(a)
    lin = LinearBlockMap.detect(a.linear, a.blocks, a.mode)
    p = jets.sub_identity(jets.compose(a, lin.inverse().as_jet(a.trunc)))
    plus, minus = split_sides(p, table)
    residual = jets.coeff_norm(minus)
    if residual > _plus_tol(a.mode, tol):
        raise ClosureViolation(f"MINUS residual {float(residual):.3e} after re-factoring")
    return NormalFormFactor.make(table, plus, lin)


def _check_pair(A: NormalFormFactor, B: NormalFormFactor) -> None:
    if A.table != B.table:
        raise ShapeMismatch("group elements belong to different resonance tables")
    if A.trunc != B.trunc or A.mode != B.mode:
        raise ShapeMismatch("group elements differ in truncation or mode")


def group_compose(A: NormalFormFactor, B: NormalFormFactor, *, tol=None) -> NormalFormFactor:
    """``A o B`` re-factored as ``(Id + p'') o (B_A B_B)``.

    Uses ``(Id+p_A) o B_A o (Id+p_B) o B_B = (Id+p_A) o (Id + B_A p_B B_A^-1) o B_A B_B``.
    """
    _check_pair(A, B)
    conj = jets.conjugate_linear(B.p, A.lin.inverse().matrix)
    composite = jets.compose(A.aut.to_jet(), jets.add_identity(conj))
    p = jets.sub_identity(composite)
    plus, minus = split_sides(p, A.table)
    residual = jets.coeff_norm(minus)
    if residual > _plus_tol(A.mode, tol):
        raise ClosureViolation(f"composition left MINUS residual {float(residual):.3e}")
    return NormalFormFactor.make(A.table, plus, A.lin @ B.lin)


def group_invert(A: NormalFormFactor, *, tol=None) -> NormalFormFactor:
    """``((Id+p) o B)^-1 = (Id + B^-1 q B) o B^-1`` where ``Id + q = (Id+p)^-1``."""
    q = jets.sub_identity(jets.invert(A.aut.to_jet()))
    p_new = jets.conjugate_linear(q, A.lin.matrix)
    plus, minus = split_sides(p_new, A.table)
    residual = jets.coeff_norm(minus)
    if residual > _plus_tol(A.mode, tol):
        raise ClosureViolation(f"inversion left MINUS residual {float(residual):.3e}")
    return NormalFormFactor.make(A.table, plus, A.lin.inverse())


def minus_residual(A: NormalFormFactor, B: NormalFormFactor):
    """Size of the MINUS part of ``A o B`` before projection (0 when closure holds)."""
    _check_pair(A, B)
    p = jets.sub_identity(jets.compose(A.to_jet(), B.to_jet()))
    p = jets.compose(p, (A.lin @ B.lin).inverse().as_jet(A.trunc))
    return off_side_norm(p, Side.PLUS, A.table)


def is_member(a: JetMap, table: ResonanceTable, *, tol=None) -> Membership:
    """Most specific group (or monoid) containing the jet ``a``."""
    table.check_jet(a)
    tol = _plus_tol(a.mode, tol)
    if not sc.is_invertible(a.linear, a.mode):
        return Membership.NONE
    L = a.linear
    Linv = sc.inverse(L, a.mode)
    p = jets.sub_identity(jets.compose(a, jets.linear_map(a.blocks, a.trunc, Linv, a.mode)))
    unit = sc.is_identity(L)
    if off_side_norm(p, Side.PLUS, table) <= tol:
        if unit:
            return Membership.G_PLUS
        if is_block_diagonal(L, a.blocks):
            return Membership.G_PLUS_Z
        if is_flag_preserving(L, a.blocks):
            return Membership.G_PLUS_Zprime
        return Membership.NONE
    if unit and off_side_norm(p, Side.MINUS, table) <= tol:
        return Membership.G_MINUS
    return Membership.NONE


def in_semidirect_z(a: JetMap, table: ResonanceTable, *, tol=None) -> bool:
    return is_member(a, table, tol=tol) in (Membership.G_PLUS, Membership.G_PLUS_Z)


# ---------------------------------------------------------------------------
# sampling


def band_center(chi: LogValue, epsilon: LogValue, mode: str):
    """A scalar in the open band ``(e^{chi-eps}, e^{chi+eps})``, exactly ``e^chi`` when rational."""
    exact = chi.exp_rational()
    if exact is not None:
        return sc.coerce(exact, mode)
    if mode == sc.FLOAT:
        return float(chi.exp_mpf())
    if epsilon.is_zero():
        raise ValueError(f"e^{chi!r} is irrational and epsilon = 0 leaves no rational choice")
    lo, hi = float((chi - epsilon).exp_mpf()), float((chi + epsilon).exp_mpf())
    target = Fraction(float(chi.exp_mpf()))
    den = 2
    while True:
        cand = target.limit_denominator(den)
        if lo < cand < hi:
            return sc.coerce(cand, mode)
        den *= 2


def random_orthogonal(dim: int, rng: random.Random, mode: str, *, denominator: int = 4
                      ) -> sc.Matrix:
    """Cayley transform ``(I - S)(I + S)^-1`` of a random skew matrix, times a sign.

    Rational skew entries give an exactly orthogonal rational matrix.
    """
    if dim == 1:
        return ((sc.coerce(rng.choice((1, -1)), mode),),)
    S = [[sc.zero(mode)] * dim for _ in range(dim)]
    for i in range(dim):
        for j in range(i + 1, dim):
            v = sc.coerce(Fraction(rng.randint(-denominator, denominator), denominator), mode)
            S[i][j], S[j][i] = v, -v
    eye = sc.identity(dim, mode)
    minus = tuple(tuple(e - s for e, s in zip(er, sr)) for er, sr in zip(eye, S))
    plus = tuple(tuple(e + s for e, s in zip(er, sr)) for er, sr in zip(eye, S))
    Q = sc.matmul(minus, sc.inverse(plus, mode))
    if rng.random() < 0.5:
        Q = (tuple(-v for v in Q[0]),) + Q[1:]
    return Q


def random_block_linear(table: ResonanceTable, rng: random.Random, mode: str,
                        kind: LinearKind = LinearKind.DIAGONAL, *, off_bound=Fraction(1, 4)
                        ) -> LinearBlockMap:
    """Block-diagonal ``center_k * orthogonal_k`` (exact band singular values).

    For ``TRIANGULAR`` small random entries are added above the block diagonal.
    """
    blocks, spec = table.blocks, table.spectral
    d = blocks.d
    M = [[sc.zero(mode)] * d for _ in range(d)]
    for k, idx in enumerate(blocks.block_vars):
        c = band_center(spec.chi[k], spec.epsilon, mode)
        Q = random_orthogonal(len(idx), rng, mode)
        for a, r in enumerate(idx):
            for b, col in enumerate(idx):
                M[r][col] = c * Q[a][b]
    if kind is LinearKind.TRIANGULAR:
        b = blocks.block_of
        for r in range(d):
            for col in range(d):
                if b[r] < b[col]:
                    M[r][col] = sc.coerce(Fraction(rng.randint(-8, 8), 8) * Fraction(off_bound), mode)
    return LinearBlockMap(M, kind, blocks, mode)


def random_element(table: ResonanceTable, trunc: TruncationOrder, *, kind: LinearKind | None = None,
                   bound=1, seed: int = 0, mode: str = sc.RATIONAL, denominator: int = 16
                   ) -> NormalFormFactor:
    """Deterministic pseudo-random group element.

    Coefficients on the PLUS slots inside ``trunc`` are drawn from
    ``[-bound, bound]`` (multiples of ``bound/denominator`` in rational mode).
    ``kind=None`` gives a unit linear part; otherwise the linear part is drawn
    within the spectral bands with the requested pattern.
    """
    rng = random.Random(seed)
    bound = Fraction(bound) if not isinstance(bound, float) else bound
    entries = []
    if bound:
        for comp, alpha in table.plus_slots_within(trunc):
            if mode == sc.RATIONAL:
                v = Fraction(rng.randint(-denominator, denominator), denominator) * Fraction(bound)
            else:
                v = rng.uniform(-float(bound), float(bound))
            entries.append((comp, alpha, v))
    p = jets.offset(table.blocks, trunc, entries, mode=mode)
    lin = None if kind is None else random_block_linear(table, rng, mode, kind)
    return NormalFormFactor.make(table, p, lin)
