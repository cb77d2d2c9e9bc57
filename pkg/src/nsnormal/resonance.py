"""Classification of monomial slots by the conjugation action of ``L_chi``.

Conjugating a single monomial slot ``(component in block k, per-block degrees
n)`` by the block scaling ``L_chi = diag(e^{chi_k})`` multiplies it by
``exp(E(k, n))`` with ``E(k, n) = -chi_k + sum_j n_j chi_j``.  Slots with
``E >= 0`` are sub-resonant (PLUS) and span a finite-dimensional space; slots
with ``E < 0`` are contracted (MINUS).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Mapping, Sequence

from . import scalars as sc
from .errors import (
    DegreeViolation,
    EpsilonTooLarge,
    IndexOutOfRange,
    InvalidSpectralData,
    LinearPartPresent,
    ShapeMismatch,
)
from .exponents import ZERO, LogValue
from .jets import BlockStructure, Exponent, JetMap, Slot, TruncationOrder


class Side(enum.Enum):
    PLUS = "PLUS"
    MINUS = "MINUS"


@dataclass(frozen=True)
class SpectralData:
    """Exponents ``chi_1 < ... < chi_m`` with band half-width ``epsilon``."""

    chi: tuple[LogValue, ...]
    m_s: int
    epsilon: LogValue = ZERO

    def __post_init__(self):
        chi = tuple(LogValue.coerce(c) for c in self.chi)
        eps = LogValue.coerce(self.epsilon)
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "epsilon", eps)
        m = len(chi)
        if m == 0:
            raise InvalidSpectralData("at least one exponent is required")
        if not 1 <= self.m_s <= m:
            raise InvalidSpectralData(f"m_s must lie in 1..{m}")
        for a, b in zip(chi, chi[1:]):
            if not a < b:
                raise InvalidSpectralData(f"exponents must be strictly increasing: {a} !< {b}")
        if not chi[self.m_s - 1] < 0:
            raise InvalidSpectralData("chi_{m_s} must be negative")
        if self.m_s < m and chi[self.m_s] < 0:
            raise InvalidSpectralData("chi_{m_s+1} must be non-negative")
        if eps < 0:
            raise InvalidSpectralData("epsilon must be >= 0")

    @property
    def m(self) -> int:
        return len(self.chi)

    @classmethod
    def in_units(cls, unit: str, chi: Sequence, m_s: int, epsilon=0) -> "SpectralData":
        """``SpectralData.in_units("log2", [-1, 1], 1)`` means chi = (-log 2, log 2)."""
        return cls(tuple(LogValue.from_units({unit: c}) for c in chi), m_s,
                   LogValue.coerce(epsilon))

    def chi_float(self) -> list[float]:
        return [float(c) for c in self.chi]

    def to_dict(self) -> dict:
        return {"chi": [{"units": c.to_units()} for c in self.chi], "m_s": self.m_s,
                "epsilon": {"units": self.epsilon.to_units()}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SpectralData":
        return cls(tuple(LogValue.coerce(c) for c in data["chi"]), int(data["m_s"]),
                   LogValue.coerce(data.get("epsilon", 0)))


def check_blocks(spectral: SpectralData, blocks: BlockStructure) -> None:
    if spectral.m != blocks.m or spectral.m_s != blocks.m_s:
        raise ShapeMismatch(
            f"spectral data (m={spectral.m}, m_s={spectral.m_s}) does not match blocks "
            f"(m={blocks.m}, m_s={blocks.m_s})")


def exponent(k: int, n: Sequence[int], spectral: SpectralData) -> LogValue:
    """``E(k, n) = -chi_k + sum_j n_j chi_j`` (block index ``k`` is 0-based)."""
    if not 0 <= k < spectral.m:
        raise IndexOutOfRange(f"block index {k} outside 0..{spectral.m - 1}")
    if len(n) != spectral.m or any(v < 0 for v in n):
        raise IndexOutOfRange(f"per-block degree vector {tuple(n)} invalid for m={spectral.m}")
    out = -spectral.chi[k]
    for nj, cj in zip(n, spectral.chi):
        if nj:
            out = out + cj * nj
    return out


def _effective_ell(spectral: SpectralData, ell: int) -> int:
    return ell if spectral.m_s < spectral.m else 0


def classify_slot(k: int, n: Sequence[int], spectral: SpectralData, ell: int) -> Side:
    if sum(n) < 2:
        raise DegreeViolation(f"slot {tuple(n)} has total degree < 2")
    if sum(n[spectral.m_s:]) > ell:
        raise DegreeViolation(f"slot {tuple(n)} exceeds y-degree {ell}")
    return Side.PLUS if exponent(k, n, spectral).sign() >= 0 else Side.MINUS


def _x_cutoff(spectral: SpectralData, ell: int, eps: LogValue = ZERO) -> int:
    """Smallest x-degree X from which every slot is MINUS, for all data within ``eps``.

    Uses E <= (-chi_1 + eps) + ell*(max(chi_m, 0) + eps) + X*(chi_{m_s} + eps).
    """
    ell = _effective_ell(spectral, ell)
    top = max(spectral.chi[-1], ZERO) + eps if ell else ZERO
    head = -spectral.chi[0] + eps + top * ell
    rate = spectral.chi[spectral.m_s - 1] + eps  # negative
    X = 0
    while (head + rate * X).sign() >= 0:
        X += 1
    return X


def _block_degree_vectors(spectral: SpectralData, ell: int, max_x: int) -> Iterator[tuple[int, ...]]:
    ms, m = spectral.m_s, spectral.m
    ell = _effective_ell(spectral, ell)
    for xdeg in range(max_x + 1):
        for xs in _vectors(xdeg, ms):
            for ydeg in range(ell + 1):
                for ys in _vectors(ydeg, m - ms):
                    if xdeg + ydeg >= 2:
                        yield xs + ys


def _vectors(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 0:
        if total == 0:
            yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _vectors(total - first, parts - 1):
            yield (first,) + rest


def expand_slots(k: int, n: Sequence[int], blocks: BlockStructure) -> list[Slot]:
    """All concrete slots (component in block k, exponent vector with block degrees n)."""
    per_block = [list(_vectors(nj, dj)) for nj, dj in zip(n, blocks.dims)]
    alphas = [tuple(itertools.chain.from_iterable(choice))
              for choice in itertools.product(*per_block)]
    return [(i, a) for i in blocks.block_vars[k] for a in alphas]


def slot_key(slot: Slot) -> tuple:
    comp, alpha = slot
    return (comp, sum(alpha), tuple(-a for a in alpha))


def _legal(k: int, n: Sequence[int], spectral: SpectralData) -> bool:
    # transversal components must vanish on y = 0
    return k < spectral.m_s or sum(n[spectral.m_s:]) >= 1


@dataclass(eq=False)
class ResonanceTable:
    """Exact PLUS/MINUS classification for given spectral data, blocks and ``ell``."""

    spectral: SpectralData
    blocks: BlockStructure
    ell: int
    plus_basis: tuple[Slot, ...]
    r_min: int
    resonant_slots: tuple[Slot, ...]
    x_cutoff: int
    _memo: dict = field(default_factory=dict, repr=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResonanceTable):
            return NotImplemented
        return (self.spectral, self.blocks, self.ell) == (other.spectral, other.blocks, other.ell)

    def __hash__(self) -> int:
        return hash((self.spectral, self.blocks, self.ell))

    def classify_block(self, k: int, n: tuple[int, ...]) -> Side:
        side = self._memo.get((k, n))
        if side is None:
            side = classify_slot(k, n, self.spectral, self.ell)
            self._memo[(k, n)] = side
        return side

    def classify(self, comp: int, alpha: Exponent) -> Side:
        return self.classify_block(self.blocks.block_of[comp], self.blocks.block_degrees(alpha))

    def exponent_of(self, comp: int, alpha: Exponent) -> LogValue:
        return exponent(self.blocks.block_of[comp], self.blocks.block_degrees(alpha), self.spectral)

    def check_jet(self, a: JetMap) -> None:
        if a.blocks != self.blocks or a.trunc.ell != self.ell:
            raise ShapeMismatch("jet does not match the resonance table (blocks or ell)")

    def plus_slots_within(self, trunc: TruncationOrder) -> list[Slot]:
        return [s for s in self.plus_basis if sum(s[1]) <= trunc.D]

    def lossless_for(self, trunc: TruncationOrder) -> bool:
        """Whether truncation at ``trunc`` keeps every PLUS slot."""
        return all(sum(a) <= trunc.D for _, a in self.plus_basis)

    def to_rows(self) -> list[dict]:
        rows = []
        for comp, alpha in self.plus_basis:
            E = self.exponent_of(comp, alpha)
            rows.append({"comp": comp, "alpha": list(alpha), "block": self.blocks.block_of[comp],
                         "exponent": E.to_units(), "exponent_float": float(E),
                         "resonant": E.is_zero()})
        return rows


def enumerate_plus_basis(spectral: SpectralData, blocks: BlockStructure, ell: int
                         ) -> ResonanceTable:
    check_blocks(spectral, blocks)
    cutoff = _x_cutoff(spectral, ell)
    plus: list[Slot] = []
    resonant: list[Slot] = []
    memo: dict = {}
    for n in _block_degree_vectors(spectral, ell, max(cutoff - 1, 0)):
        for k in range(spectral.m):
            if not _legal(k, n, spectral):
                continue
            E = exponent(k, n, spectral)
            side = Side.PLUS if E.sign() >= 0 else Side.MINUS
            memo[(k, n)] = side
            if side is Side.PLUS:
                slots = expand_slots(k, n, blocks)
                plus.extend(slots)
                if E.is_zero():
                    resonant.extend(slots)
    plus.sort(key=slot_key)
    resonant.sort(key=slot_key)
    r_min = max((blocks.x_degree(a) for _, a in plus), default=0)
    return ResonanceTable(spectral, blocks, ell, tuple(plus), r_min, tuple(resonant), cutoff, memo)


def _check_offset(a: JetMap, table: ResonanceTable) -> None:
    if not a.has_zero_linear_part:
        raise LinearPartPresent("projection is defined on maps with zero linear part")
    table.check_jet(a)


def project(a: JetMap, side: Side, table: ResonanceTable) -> JetMap:
    """Keep exactly the coefficients whose slot classifies to ``side``."""
    _check_offset(a, table)
    return a.filter_slots(lambda k, alpha: table.classify(k, alpha) is side)


def split_sides(a: JetMap, table: ResonanceTable) -> tuple[JetMap, JetMap]:
    """``(PLUS part, MINUS part)`` of an offset map."""
    return project(a, Side.PLUS, table), project(a, Side.MINUS, table)


def off_side_norm(a: JetMap, side: Side, table: ResonanceTable):
    """Largest coefficient magnitude sitting on slots *not* classified ``side``."""
    table.check_jet(a)
    best = sc.zero(a.mode)
    for k, alpha, v in a.items():
        if table.classify(k, alpha) is not side and abs(v) > best:
            best = abs(v)
    return best


def is_supported(a: JetMap, side: Side, table: ResonanceTable, tol=0) -> bool:
    return off_side_norm(a, side, table) <= tol


@dataclass(frozen=True)
class MarginReport:
    eps_max: LogValue | None
    resonant: tuple[Slot, ...]
    ok: bool
    epsilon: LogValue
    slots_checked: int
    x_cutoff: int
    argmin: Slot | None = None

    def to_dict(self) -> dict:
        return {
            "eps_max": None if self.eps_max is None else {"units": self.eps_max.to_units()},
            "eps_max_float": None if self.eps_max is None else float(self.eps_max),
            "epsilon": {"units": self.epsilon.to_units()},
            "resonant": [{"comp": c, "alpha": list(a)} for c, a in self.resonant],
            "ok": self.ok,
            "slots_checked": self.slots_checked,
            "x_cutoff": self.x_cutoff,
            "argmin": None if self.argmin is None else {"comp": self.argmin[0],
                                                        "alpha": list(self.argmin[1])},
        }


def _scan_margin(spectral: SpectralData, blocks: BlockStructure, ell: int, cutoff: int):
    best: LogValue | None = None
    argmin = None
    resonant: list[Slot] = []
    checked = 0
    for n in _block_degree_vectors(spectral, ell, cutoff - 1):
        for k in range(spectral.m):
            if not _legal(k, n, spectral):
                continue
            checked += 1
            E = exponent(k, n, spectral)
            if E.is_zero():
                resonant.extend(expand_slots(k, n, blocks))
                continue
            ratio = abs(E) * Fraction(1, 1 + sum(n))
            if best is None or ratio < best:
                best, argmin = ratio, expand_slots(k, n, blocks)[0]
    return best, argmin, resonant, checked


def validate_margin(spectral: SpectralData, blocks: BlockStructure, ell: int) -> MarginReport:
    """Largest band half-width that cannot flip any slot's PLUS/MINUS class.

    Moving every exponent by at most ``eps`` moves ``E(k, n)`` by at most
    ``eps * (1 + |n|)``; slots whose x-degree is past the eps-dependent cutoff
    stay MINUS for all perturbed data, leaving a finite set to examine.
    Resonant slots (``E = 0``) are reported separately: no positive eps keeps
    their strict sign.
    """
    check_blocks(spectral, blocks)
    eps = spectral.epsilon
    gap = -spectral.chi[spectral.m_s - 1]
    if not eps < gap:
        raise EpsilonTooLarge(f"epsilon {float(eps):.6g} must be below |chi_ms| = {float(gap):.6g}")
    # Slots past _x_cutoff(e) have |E| > e (1 + |n|), so a minimum found below
    # the cutoff for the candidate itself is global.  x-degree 2 is always
    # scanned, which keeps the candidate below ``gap``.
    cutoff = max(_x_cutoff(spectral, ell, eps), 3)
    while True:
        best, argmin, resonant, checked = _scan_margin(spectral, blocks, ell, cutoff)
        need = _x_cutoff(spectral, ell, max(eps, best)) if best is not None else cutoff
        if need <= cutoff:
            break
        cutoff = need
    resonant.sort(key=slot_key)
    ok = not resonant and (best is None or eps <= best)
    return MarginReport(best, tuple(resonant), ok, eps, checked, cutoff, argmin)
