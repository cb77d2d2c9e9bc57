"""Backward-sweep normalization of a cocycle of jet maps.

Each step is split as ``f_n = (Id + g_n) o L_n``.  Starting from a terminal
coordinate change ``h_N`` the sweep descends in ``n``:

    Id + q     = (Id + h_{n+1}) o (Id + g_n)
    Id + q     = (Id + p_n) o (Id + w_n)       p_n PLUS, w_n MINUS
    h_n        = L_n^{-1} o w_n o L_n
    P_n        = (Id + p_n) o L_n

so that ``(Id + h_{n+1}) o f_n = P_n o (Id + h_n)`` holds exactly in the jet
algebra.  Horizons are pushed outward until ``h_n`` stops moving.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from . import jets
from . import scalars as sc
from .errors import (
    InvalidParams,
    NoConvergence,
    NotInGPlus,
    ShapeMismatch,
    SpectralViolation,
)
from .exponents import LogValue
from .group import (
    LinearBlockMap,
    LinearKind,
    Membership,
    NormalFormFactor,
    group_compose,
    group_invert,
    is_block_diagonal,
    is_member,
)
from .jets import BlockStructure, JetMap, TruncationOrder
from .resonance import (
    ResonanceTable,
    Side,
    SpectralData,
    check_blocks,
    enumerate_plus_basis,
    is_supported,
    split_sides,
)

FLOAT_EQ_TOL = 1e-12


# ---------------------------------------------------------------------------
# spectral band check


@dataclass(frozen=True)
class BandViolation:
    block: int
    sigma_min: float
    sigma_max: float
    low: float
    high: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SpectralReport:
    ok: bool
    violations: tuple[BandViolation, ...]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": [v.to_dict() for v in self.violations]}


def _log_sigma_range(block: sc.Matrix, mode: str):
    """``(log sigma_min, log sigma_max)``, as exact LogValues when possible."""
    n = len(block)
    if mode == sc.RATIONAL:
        gram = sc.matmul(tuple(zip(*block)), block)
        c = gram[0][0]
        if c > 0 and all(gram[i][j] == (c if i == j else 0) for i in range(n) for j in range(n)):
            lv = LogValue.log(sc.to_fraction(c), Fraction(1, 2))
            return lv, lv
    s = np.linalg.svd(np.array(sc.to_float_rows(block), dtype=float), compute_uv=False)
    if s[-1] <= 0:
        return -math.inf, math.log(s[0]) if s[0] > 0 else -math.inf
    return math.log(s[-1]), math.log(s[0])


def _inside(value, low, high, center, eps_zero: bool) -> bool:
    if isinstance(value, LogValue):
        return value == center if eps_zero else (low < value < high)
    c = float(center)
    if eps_zero:
        return abs(value - c) <= FLOAT_EQ_TOL * max(1.0, abs(c))
    return float(low) < value < float(high)


def validate_spectral(L: LinearBlockMap | sc.Matrix, spectral: SpectralData,
                      blocks: BlockStructure | None = None, mode: str | None = None
                      ) -> SpectralReport:
    """Check ``e^{chi_k - eps} < sigma_min <= sigma_max < e^{chi_k + eps}`` per block.

    With ``epsilon = 0`` the open band is empty; the degenerate condition
    ``sigma_min = sigma_max = e^{chi_k}`` is checked instead.
    """
    if isinstance(L, LinearBlockMap):
        mat, blocks, mode = L.matrix, L.blocks, L.mode
    else:
        if blocks is None:
            raise ValueError("blocks are required for a bare matrix")
        mode = mode or sc.RATIONAL
        mat = sc.as_matrix(L, mode, blocks.d)
    if not is_block_diagonal(mat, blocks):
        raise SpectralViolation("linear part is not block diagonal")
    eps = spectral.epsilon
    eps_zero = eps.is_zero()
    bad = []
    for k, idx in enumerate(blocks.block_vars):
        sub = tuple(tuple(mat[r][c] for c in idx) for r in idx)
        lo_s, hi_s = _log_sigma_range(sub, mode)
        chi = spectral.chi[k]
        low, high = chi - eps, chi + eps
        if not (_inside(lo_s, low, high, chi, eps_zero) and _inside(hi_s, low, high, chi, eps_zero)):
            bad.append(BandViolation(k, math.exp(float(lo_s)), math.exp(float(hi_s)),
                                     float(low.exp_mpf()), float(high.exp_mpf())))
    return SpectralReport(not bad, tuple(bad))


# ---------------------------------------------------------------------------
# cocycles


@dataclass(eq=False)
class CocycleSpec:
    """A sequence ``f_0, f_1, ...`` of jets, either listed or produced by a pure generator.

    ``horizon`` is the number of available steps (``None``: unbounded, only for
    generators).  ``source`` is a JSON-ready description of the generator used
    for serialization and hashing.
    """

    spectral: SpectralData
    blocks: BlockStructure
    trunc: TruncationOrder
    mode: str = sc.RATIONAL
    steps: tuple[JetMap, ...] | None = None
    generator: Callable[[int], JetMap] | None = None
    horizon: int | None = None
    source: dict | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        sc.check_mode(self.mode)
        check_blocks(self.spectral, self.blocks)
        if (self.steps is None) == (self.generator is None):
            raise InvalidParams("give exactly one of steps or generator")
        if self.steps is not None:
            self.steps = tuple(self.steps)
            self.horizon = len(self.steps)
            for n, f in enumerate(self.steps):
                self._validate(n, f)
        elif self.horizon is not None and self.horizon < 0:
            raise InvalidParams("horizon must be non-negative")
        self.table = enumerate_plus_basis(self.spectral, self.blocks, self.trunc.ell)

    @property
    def is_explicit(self) -> bool:
        return self.steps is not None

    def _validate(self, n: int, f: JetMap) -> None:
        if f.blocks != self.blocks or f.trunc != self.trunc:
            raise ShapeMismatch(f"step {n} has different blocks or truncation")
        if f.mode != self.mode:
            raise ShapeMismatch(f"step {n} is in {f.mode} mode, cocycle is {self.mode}")
        report = validate_spectral(f.linear, self.spectral, self.blocks, self.mode)
        if not report.ok:
            v = report.violations[0]
            raise SpectralViolation(
                f"step {n}: block {v.block} singular values [{v.sigma_min:.6g}, {v.sigma_max:.6g}]"
                f" outside band ({v.low:.6g}, {v.high:.6g})")

    def step(self, n: int) -> JetMap:
        if n < 0 or (self.horizon is not None and n >= self.horizon):
            raise IndexError(f"step {n} outside the cocycle horizon {self.horizon}")
        if self.steps is not None:
            return self.steps[n]
        f = self._cache.get(n)
        if f is None:
            f = self.generator(n)
            self._validate(n, f)
            self._cache[n] = f
        return f

    def split(self, n: int) -> tuple[LinearBlockMap, JetMap]:
        key = ("split", n)
        out = self._cache.get(key)
        if out is None:
            out = split_linear(self.step(n))
            self._cache[key] = out
        return out

    def prefix(self, length: int) -> list[JetMap]:
        return [self.step(n) for n in range(length)]

    def mapped(self, fn: Callable[[JetMap], JetMap], source_note: dict | None = None
               ) -> "CocycleSpec":
        """Cocycle with ``fn`` applied to every step (lazily for generators)."""
        src = None if self.source is None else {**self.source, **(source_note or {})}
        if self.steps is not None:
            return CocycleSpec(self.spectral, self.blocks, self.trunc, self.mode,
                               steps=tuple(fn(f) for f in self.steps), source=src)
        gen = self.step
        return CocycleSpec(self.spectral, self.blocks, self.trunc, self.mode,
                           generator=lambda n: fn(gen(n)), horizon=self.horizon, source=src)

    # -- serialization -------------------------------------------------------------
    def header(self) -> dict:
        return {"spectral": self.spectral.to_dict(), "blocks": self.blocks.to_dict(),
                "trunc": self.trunc.to_dict(), "mode": self.mode}

    def to_dict(self) -> dict:
        out = self.header()
        if self.steps is not None:
            out["steps"] = [{"n": n, **_step_dict(f)} for n, f in enumerate(self.steps)]
        else:
            if self.source is None:
                raise InvalidParams("generator-backed cocycle has no serializable source")
            out["generator"] = self.source
            out["horizon"] = self.horizon
        return out

    def content_hash(self) -> str:
        return canonical_hash(self.to_dict())


def _step_dict(f: JetMap) -> dict:
    return {"linear": [[sc.render(v, f.mode) for v in row] for row in f.linear],
            "coeffs": jets.coeffs_to_list(f)}


def canonical_hash(data) -> str:
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def cocycle_from_dict(data: Mapping, generator_factory: Callable[[Mapping, Mapping], Callable] | None
                      = None) -> CocycleSpec:
    """Parse a cocycle file.  ``generator_factory(header, source)`` rebuilds generators."""
    spectral = SpectralData.from_dict(data["spectral"])
    blocks = BlockStructure.from_dict(data["blocks"])
    trunc = TruncationOrder.from_dict(data["trunc"])
    mode = data.get("mode", sc.RATIONAL)
    if "steps" in data:
        steps = []
        for n, s in enumerate(sorted(data["steps"], key=lambda s: s.get("n", 0))):
            if s.get("n", n) != n:
                raise InvalidParams(f"step indices must be 0..N-1, got {s.get('n')} at {n}")
            steps.append(jets.make_jet(blocks, trunc, s["linear"],
                                       [(c["comp"], c["alpha"], c["value"]) for c in s["coeffs"]],
                                       mode=mode))
        return CocycleSpec(spectral, blocks, trunc, mode, steps=tuple(steps))
    if "generator" in data:
        if generator_factory is None:
            raise InvalidParams("generator-backed cocycle needs a generator factory")
        gen = generator_factory(data, data["generator"])
        return CocycleSpec(spectral, blocks, trunc, mode, generator=gen,
                           horizon=data.get("horizon"), source=dict(data["generator"]))
    raise InvalidParams("cocycle needs 'steps' or 'generator'")


def constant_cocycle(f: JetMap, spectral: SpectralData, horizon: int | None = None,
                     source: dict | None = None) -> CocycleSpec:
    return CocycleSpec(spectral, f.blocks, f.trunc, f.mode, generator=lambda n: f,
                       horizon=horizon, source=source)


# ---------------------------------------------------------------------------
# single steps


def split_linear(f: JetMap, spectral: SpectralData | None = None
                 ) -> tuple[LinearBlockMap, JetMap]:
    """``f = (Id + g) o L`` with ``L`` the linear part of ``f``."""
    if not is_block_diagonal(f.linear, f.blocks):
        raise SpectralViolation("linear part of a cocycle step must be block diagonal")
    L = LinearBlockMap(f.linear, LinearKind.DIAGONAL, f.blocks, f.mode)
    if spectral is not None:
        report = validate_spectral(L, spectral)
        if not report.ok:
            raise SpectralViolation(f"linear part outside spectral band: {report.to_dict()}")
    g = jets.sub_identity(jets.compose(f, L.inverse().as_jet(f.trunc)))
    return L, g


def step1(h_next: JetMap, g: JetMap, table: ResonanceTable) -> tuple[JetMap, JetMap]:
    """Factor ``(Id + h_next) o (Id + g) = (Id + p) o (Id + w)``, ``p`` PLUS, ``w`` MINUS.

    Graded recursion: with ``q`` the offset of the left side, the degree-``delta``
    part of ``q - w - p o (Id + w)`` only involves ``p, w`` of lower degree, and
    is split by slot class to give ``p_delta`` and ``w_delta``.
    """
    h_next._check_same(g)
    table.check_jet(g)
    if not (h_next.has_zero_linear_part and g.has_zero_linear_part):
        raise ShapeMismatch("step1 expects offset maps with zero linear part")
    q = jets.sub_identity(jets.compose(jets.add_identity(h_next), jets.add_identity(g)))
    zero = jets.zero_map(g.blocks, g.trunc, g.mode)
    p, w = zero, zero
    ident = jets.identity(g.blocks, g.trunc, g.mode)
    for delta in range(2, g.trunc.D + 1):
        q_delta = q.degree_part(delta)
        if delta > 2 and not p.is_linear:
            q_delta = q_delta - jets.compose(p, ident + w).degree_part(delta)
        if q_delta.is_linear:
            continue
        plus, minus = split_sides(q_delta, table)
        p, w = p + plus, w + minus
    return p, w


def step2(w: JetMap, L: LinearBlockMap) -> JetMap:
    """``h = L^{-1} o w o L``."""
    return jets.conjugate_linear(w, L.matrix)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class Sweep:
    N: int
    h: list[JetMap]
    P: list[NormalFormFactor]


def backward_sweep(cocycle: CocycleSpec, N: int, terminal: JetMap | None = None) -> Sweep:
    """Descend from ``h_N = terminal`` (default 0) to ``h_0``."""
    if N < 0:
        raise InvalidParams("horizon N must be non-negative")
    if cocycle.horizon is not None and N > cocycle.horizon:
        raise InvalidParams(f"horizon {N} exceeds the {cocycle.horizon} available steps")
    table = cocycle.table
    if terminal is None:
        terminal = jets.zero_map(cocycle.blocks, cocycle.trunc, cocycle.mode)
    elif not terminal.has_zero_linear_part:
        raise ShapeMismatch("terminal condition must have zero linear part")
    h: list[JetMap] = [terminal] * (N + 1)
    P: list[NormalFormFactor] = [None] * N  # type: ignore[list-item]
    for n in range(N - 1, -1, -1):
        L, g = cocycle.split(n)
        p, w = step1(h[n + 1], g, table)
        h[n] = step2(w, L)
        P[n] = NormalFormFactor.make(table, p, L)
    return Sweep(N, h, P)


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    N_start: int = 10
    N_step: int = 10
    N_max: int = 400
    delta_target: float | None = None
    norm_weights: Mapping | None = None
    single_sweep: bool | None = None
    min_comparisons: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidParams("tol must be positive")
        if self.N_start < 1 or self.N_step < 1:
            raise InvalidParams("N_start and N_step must be >= 1")
        if self.N_max < self.N_start:
            raise InvalidParams("N_max must be >= N_start")
        if self.delta_target is not None and not self.delta_target > 0:
            raise InvalidParams("delta_target must be positive")
        if self.min_comparisons < 1:
            raise InvalidParams("min_comparisons must be >= 1")

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        if self.norm_weights is not None:
            out["norm_weights"] = {str(k): str(v) for k, v in self.norm_weights.items()}
        return out


@dataclass
class Diagnostics:
    horizons: list[int] = field(default_factory=list)
    deltas: list[float] = field(default_factory=list)
    rate: float | None = None
    r2: float | None = None
    rho_bound: float | None = None
    lam: int = 1
    converged: bool = False
    single_sweep: bool = False
    lossless: bool = True
    exact_deltas: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"horizons": list(self.horizons), "deltas": list(self.deltas),
                "exact_deltas": list(self.exact_deltas), "rate": self.rate, "r2": self.r2,
                "rho_bound": self.rho_bound, "lambda": self.lam, "converged": self.converged,
                "single_sweep": self.single_sweep, "lossless": self.lossless}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Diagnostics":
        return cls(list(data.get("horizons", [])), list(data.get("deltas", [])),
                   data.get("rate"), data.get("r2"), data.get("rho_bound"),
                   int(data.get("lambda", 1)), bool(data.get("converged", False)),
                   bool(data.get("single_sweep", False)), bool(data.get("lossless", True)),
                   list(data.get("exact_deltas", [])))


@dataclass(eq=False)
class NormalFormResult:
    """Coordinate changes ``h_0..h_N`` and normal forms ``P_0..P_{N-1}``."""

    table: ResonanceTable
    h: list[JetMap]
    P: list[NormalFormFactor]
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    cocycle_hash: str | None = None

    def __post_init__(self):
        if len(self.h) != len(self.P) + 1:
            raise ShapeMismatch("need one more h than P")

    @property
    def N(self) -> int:
        return len(self.P)

    @property
    def mode(self) -> str:
        return self.h[0].mode

    def to_dict(self) -> dict:
        return {
            "cocycle_hash": self.cocycle_hash,
            "mode": self.mode,
            "spectral": self.table.spectral.to_dict(),
            "blocks": self.table.blocks.to_dict(),
            "trunc": self.h[0].trunc.to_dict(),
            "h": [{"n": n, "coeffs": jets.coeffs_to_list(x)} for n, x in enumerate(self.h)],
            "P": [{"n": n, **P.to_dict()} for n, P in enumerate(self.P)],
            "diagnostics": self.diagnostics.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "NormalFormResult":
        spectral = SpectralData.from_dict(data["spectral"])
        blocks = BlockStructure.from_dict(data["blocks"])
        trunc = TruncationOrder.from_dict(data["trunc"])
        mode = data.get("mode", sc.RATIONAL)
        table = enumerate_plus_basis(spectral, blocks, trunc.ell)
        hs = sorted(data["h"], key=lambda e: e["n"])
        Ps = sorted(data["P"], key=lambda e: e["n"])
        if [e["n"] for e in hs] != list(range(len(hs))) or [e["n"] for e in Ps] != list(range(len(Ps))):
            raise InvalidParams("h and P entries must be indexed 0..N")
        h = [jets.offset(blocks, trunc, [(c["comp"], c["alpha"], c["value"]) for c in e["coeffs"]],
                         mode=mode) for e in hs]
        P = [NormalFormFactor.from_dict(e, table, trunc, mode) for e in Ps]
        return cls(table, h, P, Diagnostics.from_dict(data.get("diagnostics", {})),
                   data.get("cocycle_hash"))


# ---------------------------------------------------------------------------
# rescaling


def auto_rescale(cocycle: CocycleSpec, delta_target, *, n_steps: int | None = None
                 ) -> tuple[int, CocycleSpec]:
    """Smallest power of two ``lam`` making every rescaled ``g_n`` at most ``delta_target``.

    A degree-``delta`` coefficient of ``g_n`` becomes ``c * lam**(1 - delta)``.
    Generators are inspected on their first ``n_steps`` steps.
    """
    if not delta_target > 0:
        raise InvalidParams("delta_target must be positive")
    count = cocycle.horizon if n_steps is None else n_steps
    if count is None:
        raise InvalidParams("an unbounded cocycle needs n_steps for rescaling")
    if cocycle.horizon is not None:
        count = min(count, cocycle.horizon)
    target = Fraction(str(delta_target)) if isinstance(delta_target, float) else Fraction(delta_target)
    # per degree: the largest coefficient over all inspected steps
    peak: dict[int, Fraction] = {}
    for n in range(count):
        _, g = cocycle.split(n)
        deg = g.index.deg
        for t in g._terms:
            for i, v in t.items():
                a = abs(sc.to_fraction(v))
                if a > peak.get(deg[i], 0):
                    peak[deg[i]] = a
    lam = 1
    while any(c / Fraction(lam) ** (dg - 1) > target for dg, c in peak.items()):
        lam *= 2
    if lam == 1:
        return 1, cocycle
    return lam, cocycle.mapped(lambda f: jets.rescale(f, lam), {"rescaled_by": lam})


def unscale_result(h: Sequence[JetMap], P: Sequence[NormalFormFactor], lam
                   ) -> tuple[list[JetMap], list[NormalFormFactor]]:
    """Map a solution of the rescaled cocycle back (conjugation by ``lam^{-1} Id``)."""
    if lam == 1:
        return list(h), list(P)
    inv = Fraction(1, lam) if isinstance(lam, int) else 1 / lam
    hs = [jets.rescale(x, inv) for x in h]
    Ps = [NormalFormFactor.make(F.table, jets.rescale(F.p, inv), F.lin) for F in P]
    return hs, Ps


# ---------------------------------------------------------------------------
# solving


def rho_bound(table: ResonanceTable, trunc: TruncationOrder) -> float:
    """``max exp(E + eps (1 + |n|))`` over MINUS slots present in the truncation."""
    eps = table.spectral.epsilon
    best = None
    idx = jets.monomial_index(table.blocks, trunc)
    seen = set()
    for comp in range(table.blocks.d):
        k = table.blocks.block_of[comp]
        for alpha, dg in zip(idx.exps, idx.deg):
            if dg < 2:
                continue
            if not table.blocks.is_stable_component(comp) and table.blocks.y_degree(alpha) == 0:
                continue
            n = table.blocks.block_degrees(alpha)
            if (k, n) in seen:
                continue
            seen.add((k, n))
            if table.classify_block(k, n) is Side.MINUS:
                v = table.exponent_of(comp, alpha) + eps * (1 + sum(n))
                if best is None or v > best:
                    best = v
    return 0.0 if best is None else float(best.exp_mpf())


def _log_abs(v) -> float:
    f = sc.to_fraction(v)
    return math.log(abs(f.numerator)) - math.log(f.denominator)


def fit_rate(horizons: Sequence[int], deltas: Sequence) -> tuple[float | None, float | None]:
    """Per-step geometric rate ``exp(slope)`` of ``log delta`` against ``N``, and R^2."""
    pts = [(N, _log_abs(d)) for N, d in zip(horizons, deltas) if d != 0]
    if not pts:
        return (0.0, None) if deltas else (None, None)
    if len(pts) < 2:
        return None, None
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - float((resid ** 2).sum()) / ss_tot
    return float(math.exp(slope)), r2


def _max_delta(a: Sequence[JetMap], b: Sequence[JetMap], upto: int, weights):
    best = 0
    for n in range(upto + 1):
        v = jets.coeff_norm(a[n] - b[n], weights)
        if v > best:
            best = v
    return best


def solve(cocycle: CocycleSpec, config: SolverConfig = SolverConfig(), *,
          terminal: JetMap | None = None) -> NormalFormResult:
    """Normal form coordinates for ``cocycle``.

    Finite cocycles default to a single sweep over all their steps (the answer
    relative to ``h_N = terminal`` is then final).  Otherwise sweeps at
    ``N = N_start, N_start + N_step, ...`` are compared on ``n <= N_start``
    until the largest coefficient change drops below ``tol``.
    """
    single = config.single_sweep
    if single is None:
        single = cocycle.horizon is not None
    diag = Diagnostics(single_sweep=single, lossless=cocycle.table.lossless_for(cocycle.trunc))
    diag.rho_bound = rho_bound(cocycle.table, cocycle.trunc)

    work = cocycle
    if config.delta_target is not None:
        inspect = cocycle.horizon if cocycle.horizon is not None else config.N_max
        diag.lam, work = auto_rescale(cocycle, config.delta_target, n_steps=inspect)
    if terminal is not None and diag.lam != 1:
        terminal = jets.rescale(terminal, diag.lam)

    if single:
        if cocycle.horizon is None:
            raise InvalidParams("single-sweep mode needs a finite cocycle")
        sweep = backward_sweep(work, cocycle.horizon, terminal)
        diag.horizons = [cocycle.horizon]
        diag.converged = True
        h, P = sweep.h, sweep.P
    else:
        if cocycle.horizon is not None and config.N_max > cocycle.horizon:
            raise InvalidParams(f"N_max {config.N_max} exceeds the {cocycle.horizon} available steps")
        keep = config.N_start
        N = keep
        prev = backward_sweep(work, N, terminal)
        exact = []
        while True:
            N += config.N_step
            if N > config.N_max:
                diag.rate, diag.r2 = fit_rate(diag.horizons, exact)
                raise NoConvergence(
                    f"no convergence up to N_max={config.N_max}; last delta "
                    f"{diag.deltas[-1] if diag.deltas else float('nan'):.3e}", diagnostics=diag)
            cur = backward_sweep(work, N, terminal)
            delta = _max_delta(prev.h, cur.h, keep, config.norm_weights)
            exact.append(delta)
            diag.horizons.append(N)
            diag.deltas.append(float(delta))
            diag.exact_deltas.append(sc.render(delta, work.mode))
            prev = cur
            if delta < config.tol and len(exact) >= config.min_comparisons:
                break
        diag.converged = True
        diag.rate, diag.r2 = fit_rate(diag.horizons, exact)
        h, P = cur.h[: keep + 1], cur.P[:keep]

    h, P = unscale_result(h, P, diag.lam)
    return NormalFormResult(cocycle.table, h, P, diag, _safe_hash(cocycle))


def _safe_hash(cocycle: CocycleSpec) -> str | None:
    try:
        return cocycle.content_hash()
    except InvalidParams:
        return None


# ---------------------------------------------------------------------------
# verification and gauge freedom


def diagram_defect(f: JetMap, h_n: JetMap, h_next: JetMap, P: NormalFormFactor) -> JetMap:
    """``(Id + h_{n+1}) o f o (Id + h_n)^{-1} - P`` as a jet (linear part included)."""
    inv = jets.invert(jets.add_identity(h_n))
    lhs = jets.compose_all(jets.add_identity(h_next), f, inv)
    return lhs - P.to_jet()


def _defect_size(diff: JetMap):
    lin = max((abs(v) for row in diff.linear for v in row), default=sc.zero(diff.mode))
    nl = jets.coeff_norm(diff)
    return lin if lin > nl else nl


def verify_diagram(cocycle: CocycleSpec, result: NormalFormResult, *, per_step: bool = False):
    """Largest coefficient of ``(Id + h_{n+1}) o f_n o (Id + h_n)^{-1} - P_n`` over ``n``.

    Exactly zero in rational mode for a correct result.
    """
    sizes = []
    for n in range(result.N):
        diff = diagram_defect(cocycle.step(n), result.h[n], result.h[n + 1], result.P[n])
        sizes.append(_defect_size(diff))
    worst = max(sizes, default=sc.zero(result.mode))
    return (worst, sizes) if per_step else worst


def check_result_structure(result: NormalFormResult) -> dict:
    """Support and membership facts for a (non-gauged) solver output."""
    table = result.table
    tol = 0 if result.mode == sc.RATIONAL else 1e-10
    h_minus = all(is_supported(x, Side.MINUS, table, tol) for x in result.h)
    members = [is_member(P.to_jet(), table, tol=tol) for P in result.P]
    return {"h_minus_supported": h_minus,
            "P_membership": [m.value for m in members],
            "all_P_in_G_plus_Z": all(m in (Membership.G_PLUS_Z, Membership.G_PLUS) for m in members)}


def _as_gauge(A, table: ResonanceTable, trunc: TruncationOrder, mode: str) -> NormalFormFactor:
    if isinstance(A, NormalFormFactor):
        if not A.lin.is_identity():
            raise NotInGPlus("gauge elements must have identity linear part")
        return A
    if isinstance(A, JetMap):
        if not sc.is_identity(A.linear):
            raise NotInGPlus("gauge elements must have identity linear part")
        p = jets.sub_identity(A)
        tol = 0 if mode == sc.RATIONAL else 1e-10
        if not is_supported(p, Side.PLUS, table, tol):
            raise NotInGPlus("gauge element has MINUS coefficients")
        plus, _ = split_sides(p, table)
        return NormalFormFactor.make(table, plus)
    raise TypeError("gauge must be a NormalFormFactor or a JetMap")


def gauge_transform(result: NormalFormResult, gauges: Sequence) -> NormalFormResult:
    """``h'_n = A_n o (Id + h_n) - Id``, ``P'_n = A_{n+1} o P_n o A_n^{-1}``."""
    if len(gauges) != len(result.h):
        raise ShapeMismatch(f"need {len(result.h)} gauge elements, got {len(gauges)}")
    trunc = result.h[0].trunc
    A = [_as_gauge(a, result.table, trunc, result.mode) for a in gauges]
    for a in A:
        if a.table != result.table or a.trunc != trunc or a.mode != result.mode:
            raise ShapeMismatch("gauge elements do not match the result")
    h = [jets.sub_identity(jets.compose(a.to_jet(), jets.add_identity(x)))
         for a, x in zip(A, result.h)]
    P = [group_compose(group_compose(A[n + 1], result.P[n]), group_invert(A[n]))
         for n in range(result.N)]
    diag = replace(result.diagnostics)
    return NormalFormResult(result.table, h, P, diag, result.cocycle_hash)


def identity_gauges(result: NormalFormResult) -> list[NormalFormFactor]:
    trunc = result.h[0].trunc
    return [NormalFormFactor.identity(result.table, trunc, result.mode) for _ in result.h]


# ---------------------------------------------------------------------------
# ray fits


def diagram_ray_slopes(f: JetMap, h_n: JetMap, h_next: JetMap, P: NormalFormFactor,
                       direction: Sequence, t_grid: Sequence) -> float:
    """Fitted order of ``(Id+h_{n+1})(f(v)) - P((Id+h_n)(v))`` along ``v = t * direction``.

    The maps are evaluated as genuine polynomials, so the residual only holds
    the monomials the truncation discards.
    """
    PJ = P.to_jet()
    lhs_a, lhs_b = jets.add_identity(h_next), f
    rhs_a, rhs_b = PJ, jets.add_identity(h_n)
    exact = f.mode == sc.RATIONAL
    return jets.ray_residual_order(lambda v: lhs_a(lhs_b(v)), lambda v: rhs_a(rhs_b(v)),
                                   direction, t_grid, exact=exact)


def ray_thresholds(trunc: TruncationOrder, blocks: BlockStructure) -> dict:
    ell = trunc.ell if blocks.m_s < blocks.m else trunc.D
    return {"full": min(trunc.D, ell) + 1 - 0.15,
            "pure_y": (ell + 1 - 0.15) if blocks.m_s < blocks.m else None}


DEFAULT_T_GRID = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4)


def default_directions(blocks: BlockStructure) -> dict:
    """A generic ambient direction and a pure-y direction (``x = 0``)."""
    d = blocks.d
    full = [Fraction(1, 1 + j) * (1 if j % 2 == 0 else -1) + Fraction(1, 3) for j in range(d)]
    if blocks.m_s == blocks.m:
        return {"full": full, "pure_y": None}
    pure = [Fraction(0)] * blocks.d_s + [Fraction(2 + j, 3) for j in range(d - blocks.d_s)]
    return {"full": full, "pure_y": pure}


def ray_report(cocycle: CocycleSpec, result: NormalFormResult, n: int = 0,
               t_grid: Sequence = DEFAULT_T_GRID) -> dict:
    dirs = default_directions(cocycle.blocks)
    th = ray_thresholds(cocycle.trunc, cocycle.blocks)
    args = (cocycle.step(n), result.h[n], result.h[n + 1], result.P[n])
    out = {"n": n, "full": diagram_ray_slopes(*args, dirs["full"], t_grid),
           "full_threshold": th["full"]}
    out["full_ok"] = out["full"] >= th["full"]
    if dirs["pure_y"] is not None:
        out["pure_y"] = diagram_ray_slopes(*args, dirs["pure_y"], t_grid)
        out["pure_y_threshold"] = th["pure_y"]
        out["pure_y_ok"] = out["pure_y"] >= th["pure_y"]
    return out

