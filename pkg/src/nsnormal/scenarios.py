"""Reproducible cocycles, jet extraction from black-box maps, and band estimation."""

from __future__ import annotations

import enum
import itertools
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import mpmath
import numpy as np

from . import jets
from . import scalars as sc
from .errors import FitFailure, InvalidParams, NotBlockDiagonal, StableLeak, TooFewSamples
from .group import band_center, is_block_diagonal, random_block_linear
from .jets import BlockStructure, JetMap, TruncationOrder
from .resonance import SpectralData, enumerate_plus_basis
from .solver import CocycleSpec, canonical_hash

GOLDEN = (math.sqrt(5) - 1) / 2


class ScenarioKind(enum.Enum):
    CONSTANT = "CONSTANT"
    RANDOM = "RANDOM"
    SKEW_PRODUCT = "SKEW_PRODUCT"
    EXPLICIT = "EXPLICIT"


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """Recipe for a cocycle.

    params by kind:
      CONSTANT      ``base``: step dict ``{linear, coeffs}``
      RANDOM        ``seed``, ``bound``, optional ``density`` (default 1),
                    ``denominator`` (16), ``max_degree`` (D)
      SKEW_PRODUCT  ``angle`` (rotation number, default golden ratio), ``seed``,
                    ``bound``, ``terms`` (random trigonometric terms per slot, 1)
      EXPLICIT      ``steps``: list of step dicts
    ``length=None`` leaves generator kinds unbounded.
    """

    kind: ScenarioKind
    spectral: SpectralData
    blocks: BlockStructure
    trunc: TruncationOrder
    params: Mapping = field(default_factory=dict)
    length: int | None = None
    mode: str = sc.RATIONAL

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        sc.check_mode(self.mode)
        if self.length is not None and self.length < 0:
            raise InvalidParams("length must be non-negative")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "spectral": self.spectral.to_dict(),
                "blocks": self.blocks.to_dict(), "trunc": self.trunc.to_dict(),
                "params": _jsonable(self.params), "length": self.length, "mode": self.mode}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioSpec":
        try:
            return cls(ScenarioKind(data["kind"]), SpectralData.from_dict(data["spectral"]),
                       BlockStructure.from_dict(data["blocks"]),
                       TruncationOrder.from_dict(data["trunc"]), dict(data.get("params", {})),
                       data.get("length"), data.get("mode", sc.RATIONAL))
        except KeyError as e:
            raise InvalidParams(f"scenario is missing field {e}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _jsonable(x):
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Fraction) or type(x).__name__ == "mpq":
        return str(x)
    return x


def _step_from_dict(d: Mapping, spec: ScenarioSpec) -> JetMap:
    try:
        return jets.make_jet(spec.blocks, spec.trunc, d["linear"],
                             [(c["comp"], c["alpha"], c["value"]) for c in d.get("coeffs", [])],
                             mode=spec.mode)
    except KeyError as e:
        raise InvalidParams(f"step is missing field {e}") from None


def step_to_dict(f: JetMap) -> dict:
    return {"linear": [[sc.render(v, f.mode) for v in row] for row in f.linear],
            "coeffs": jets.coeffs_to_list(f)}


def _nonlinear_slots(blocks: BlockStructure, trunc: TruncationOrder, max_degree: int):
    idx = jets.monomial_index(blocks, trunc)
    out = []
    for comp in range(blocks.d):
        for alpha, dg in zip(idx.exps, idx.deg):
            if 2 <= dg <= max_degree and (blocks.is_stable_component(comp)
                                          or blocks.y_degree(alpha) >= 1):
                out.append((comp, alpha))
    return out


def _fraction_param(x, name: str) -> Fraction:
    try:
        return Fraction(str(x)) if isinstance(x, float) else Fraction(x)
    except (TypeError, ValueError):
        raise InvalidParams(f"parameter {name!r} must be a number, got {x!r}") from None


def _random_generator(spec: ScenarioSpec) -> Callable[[int], JetMap]:
    p = spec.params
    seed = int(p.get("seed", 0))
    bound = _fraction_param(p.get("bound", Fraction(1, 10)), "bound")
    density = float(p.get("density", 1.0))
    den = int(p.get("denominator", 16))
    maxdeg = int(p.get("max_degree", spec.trunc.D))
    if bound < 0 or not 0 <= density <= 1 or den < 1:
        raise InvalidParams("need bound >= 0, 0 <= density <= 1, denominator >= 1")
    table = enumerate_plus_basis(spec.spectral, spec.blocks, spec.trunc.ell)
    slots = _nonlinear_slots(spec.blocks, spec.trunc, maxdeg)
    mode = spec.mode

    def gen(n: int) -> JetMap:
        rng = random.Random(f"{seed}:{n}")
        lin = random_block_linear(table, rng, mode)
        entries = []
        for comp, alpha in slots:
            if rng.random() < density:
                v = Fraction(rng.randint(-den, den), den) * bound
                if v:
                    entries.append((comp, alpha, v if mode == sc.RATIONAL else float(v)))
        return jets.make_jet(spec.blocks, spec.trunc, lin.matrix, entries, mode=mode)

    return gen


def _rational_cos_sin(turns: float, mode: str, den: int = 1 << 16):
    """Exact point of the unit circle near angle ``2 pi turns`` (rational half-angle tangent)."""
    phi = 2 * math.pi * (turns % 1.0)
    if mode == sc.FLOAT:
        return math.cos(phi), math.sin(phi)
    if abs(math.cos(phi / 2)) < 1e-9:
        return sc.coerce(-1, mode), sc.coerce(0, mode)
    t = Fraction(math.tan(phi / 2)).limit_denominator(den)
    c, s = (1 - t * t) / (1 + t * t), 2 * t / (1 + t * t)
    return sc.coerce(c, mode), sc.coerce(s, mode)


def _skew_generator(spec: ScenarioSpec) -> Callable[[int], JetMap]:
    """Steps driven by the rotation ``theta_n = n * angle (mod 1)``.

    Linear parts are band centers times a rotation by ``theta_n`` on 2-dim
    blocks; each nonlinear coefficient is a trigonometric polynomial in
    ``theta_n`` with seeded amplitudes, so steps are bounded and non-periodic.
    """
    p = spec.params
    angle = float(p.get("angle", GOLDEN))
    seed = int(p.get("seed", 0))
    bound = _fraction_param(p.get("bound", Fraction(1, 10)), "bound")
    n_terms = int(p.get("terms", 1))
    if bound < 0 or n_terms < 1:
        raise InvalidParams("need bound >= 0 and terms >= 1")
    rng = random.Random(f"skew:{seed}")
    slots = _nonlinear_slots(spec.blocks, spec.trunc, spec.trunc.D)
    # per slot: mean plus sum of amplitude * cos(2 pi (freq * theta + phase))
    family = []
    for slot in slots:
        mean = Fraction(rng.randint(-8, 8), 16)
        waves = [(Fraction(rng.randint(-8, 8), 16), rng.randint(1, 3), rng.random())
                 for _ in range(n_terms)]
        family.append((slot, mean, waves))
    scale = bound / (Fraction(1, 2) + Fraction(n_terms, 2))
    mode = spec.mode
    blocks, spectral = spec.blocks, spec.spectral
    centers = [band_center(c, spectral.epsilon, mode) for c in spectral.chi]

    def gen(n: int) -> JetMap:
        theta = (n * angle) % 1.0
        d = blocks.d
        M = [[sc.zero(mode)] * d for _ in range(d)]
        for k, idx in enumerate(blocks.block_vars):
            if len(idx) == 2:
                c, s = _rational_cos_sin(theta, mode)
                Q = ((c, -s), (s, c))
            else:
                Q = sc.identity(len(idx), mode)
            for a, r in enumerate(idx):
                for b, col in enumerate(idx):
                    M[r][col] = centers[k] * Q[a][b]
        entries = []
        for (comp, alpha), mean, waves in family:
            v = sc.coerce(mean, mode)
            for amp, freq, phase in waves:
                cs, _ = _rational_cos_sin(freq * theta + phase, mode)
                v += sc.coerce(amp, mode) * cs
            v *= sc.coerce(scale, mode)
            if v:
                entries.append((comp, alpha, v))
        return jets.make_jet(blocks, spec.trunc, M, entries, mode=mode)

    return gen


def generator_for(spec: ScenarioSpec) -> Callable[[int], JetMap]:
    if spec.kind is ScenarioKind.CONSTANT:
        if "base" not in spec.params:
            raise InvalidParams("CONSTANT scenario needs params.base")
        base = _step_from_dict(spec.params["base"], spec)
        return lambda n: base
    if spec.kind is ScenarioKind.RANDOM:
        return _random_generator(spec)
    if spec.kind is ScenarioKind.SKEW_PRODUCT:
        return _skew_generator(spec)
    raise InvalidParams(f"{spec.kind.value} scenarios have no generator")


def generate(spec: ScenarioSpec) -> CocycleSpec:
    """Deterministic cocycle for ``spec``; every produced step is validated."""
    if spec.kind is ScenarioKind.EXPLICIT:
        steps = spec.params.get("steps")
        if not steps:
            raise InvalidParams("EXPLICIT scenario needs a non-empty params.steps")
        fs = tuple(_step_from_dict(s, spec) for s in steps)
        if spec.length is not None and spec.length != len(fs):
            raise InvalidParams("length disagrees with the number of explicit steps")
        return CocycleSpec(spec.spectral, spec.blocks, spec.trunc, spec.mode, steps=fs)
    gen = generator_for(spec)
    cocycle = CocycleSpec(spec.spectral, spec.blocks, spec.trunc, spec.mode, generator=gen,
                          horizon=spec.length, source=spec.to_dict())
    if spec.length is not None:
        cocycle.prefix(spec.length)  # validates every step
    else:
        cocycle.step(0)
    return cocycle


def scenario_generator_factory(header: Mapping, source: Mapping) -> Callable[[int], JetMap]:
    """Rebuilds the generator of a serialized generator-backed cocycle."""
    return generator_for(ScenarioSpec.from_dict(source))


def materialize(cocycle: CocycleSpec, length: int) -> CocycleSpec:
    """Explicit-step copy of the first ``length`` steps."""
    return CocycleSpec(cocycle.spectral, cocycle.blocks, cocycle.trunc, cocycle.mode,
                       steps=tuple(cocycle.prefix(length)))


def steps_hash(cocycle: CocycleSpec, length: int) -> str:
    return canonical_hash([step_to_dict(f) for f in cocycle.prefix(length)])


# ---------------------------------------------------------------------------
# jet extraction from samples


def _leja_nodes(count: int, radius: Fraction) -> list[Fraction]:
    """``0`` followed by Leja-ordered rational Chebyshev-like nodes in ``[-radius, radius]``."""
    pool_size = max(2 * count, 8)
    pool = sorted({Fraction(math.cos(math.pi * (2 * i + 1) / (2 * pool_size))).limit_denominator(4096)
                   for i in range(pool_size)})
    pool = [c for c in pool if c != 0]
    nodes = [Fraction(0)]
    while len(nodes) < count:
        best = max(pool, key=lambda c: math.prod(abs(float(c - t)) for t in nodes))
        nodes.append(best)
        pool.remove(best)
    return [radius * t for t in nodes]


def _lower_set(blocks: BlockStructure, D: int, ell: int) -> list[tuple[int, ...]]:
    """Exponents of total degree <= D with y-degree <= ell, graded order."""
    d = blocks.d
    out = []
    for dg in range(D + 1):
        for alpha in itertools.product(range(dg + 1), repeat=d):
            if sum(alpha) == dg and blocks.y_degree(alpha) <= ell:
                out.append(alpha)
    return out


def _newton_fit(values: dict, exps: list, nodes: list, arith) -> dict:
    """Newton coefficients on a lower set with tensor nodes (triangular solve)."""
    coef = {}
    for beta in exps:
        x = [nodes[b] for b in beta]
        acc = values[beta]
        for alpha, c in coef.items():
            if all(a <= b for a, b in zip(alpha, beta)):
                basis = arith(1)
                for j, aj in enumerate(alpha):
                    for i in range(aj):
                        basis *= x[j] - nodes[i]
                acc = acc - c * basis
        denom = arith(1)
        for j, bj in enumerate(beta):
            for i in range(bj):
                denom *= x[j] - nodes[i]
        coef[beta] = acc / denom
    return coef


def _newton_to_monomial(coef: dict, nodes: list, d: int, arith) -> dict:
    """Expand ``sum c_alpha prod_j prod_{i<alpha_j} (x_j - t_i)`` into monomials."""
    # univariate expansions prod_{i<a} (x - t_i)
    max_a = max((max(a) for a in coef), default=0)
    uni = [[arith(1)]]
    for a in range(max_a):
        prev = uni[-1]
        nxt = [arith(0)] * (len(prev) + 1)
        for k, c in enumerate(prev):
            nxt[k + 1] += c
            nxt[k] -= nodes[a] * c
        uni.append(nxt)
    out: dict = {}
    for alpha, c in coef.items():
        if not c:
            continue
        for powers in itertools.product(*(range(a + 1) for a in alpha)):
            v = c
            for j, pw in enumerate(powers):
                v = v * uni[alpha[j]][pw]
            if v:
                out[powers] = out.get(powers, arith(0)) + v
    return out


def jet_from_samples(sampler: Callable[[Sequence], Sequence], blocks: BlockStructure,
                     trunc: TruncationOrder, sample_radius, *, mode: str = sc.FLOAT,
                     extra_degree: int | None = None, dps: int | None = None,
                     stable_tol: float | None = None, fit_tol: float | None = None,
                     held_out: int = 8, seed: int = 0) -> JetMap:
    """Truncated Taylor jet of ``sampler`` at 0 by interpolation on a lower-set grid.

    Points are ``(t_{a_1}, ..., t_{a_d})`` for exponents ``a`` of the fitted
    region, which makes the Newton system triangular.  The region is the
    truncation region widened by ``extra_degree`` (default 2 in float mode,
    0 in rational mode) to push aliasing below the kept coefficients.
    ``dps`` switches float arithmetic to mpmath at that precision.
    In rational mode the sampler receives and must return exact rationals.
    """
    sc.check_mode(mode)
    d = blocks.d
    exact = mode == sc.RATIONAL
    if extra_degree is None:
        extra_degree = 0 if exact else 2
    r = Fraction(str(sample_radius)) if isinstance(sample_radius, float) else Fraction(sample_radius)
    if not r > 0:
        raise InvalidParams("sample_radius must be positive")
    ell = trunc.ell if blocks.m_s < blocks.m else trunc.D
    D_fit, ell_fit = trunc.D + extra_degree, min(ell + extra_degree, trunc.D + extra_degree)
    exps = _lower_set(blocks, D_fit, ell_fit)
    fr_nodes = _leja_nodes(D_fit + 1, r)
    if exact:
        arith = Fraction
        nodes = fr_nodes
        conv = sc.to_fraction
    elif dps:
        arith = mpmath.mpf
        nodes = [mpmath.mpf(t.numerator) / t.denominator for t in fr_nodes]
        conv = mpmath.mpf
    else:
        arith = float
        nodes = [float(t) for t in fr_nodes]
        conv = float

    ctx = mpmath.workdps(dps) if (dps and not exact) else _nullctx()
    with ctx:
        samples = {}
        for beta in exps:
            pt = [nodes[b] for b in beta]
            val = list(sampler(pt))
            if len(val) != d:
                raise FitFailure(f"sampler returned {len(val)} components, expected {d}")
            samples[beta] = [conv(v) for v in val]
        scale = max((abs(float(v)) for vals in samples.values() for v in vals), default=0.0) or 1.0

        # stable subspace must be invariant: y-components vanish where y = 0
        s_tol = (0 if exact else 1e-12 * scale) if stable_tol is None else stable_tol
        for beta in exps:
            if blocks.y_degree(beta) == 0:
                for comp in blocks.y_vars:
                    if abs(float(samples[beta][comp])) > s_tol:
                        raise StableLeak(f"component {comp} is {float(samples[beta][comp]):.3e} "
                                         f"on y = 0; the stable subspace is not invariant")
        zero_pt = tuple([0] * d)
        if any(abs(float(v)) > (s_tol if not exact else 0) for v in samples[zero_pt]):
            raise FitFailure("sampler does not fix the origin")

        polys = []
        for comp in range(d):
            coef = _newton_fit({b: samples[b][comp] for b in exps}, exps, nodes, arith)
            polys.append(_newton_to_monomial(coef, nodes, d, arith))

        _held_out_check(sampler, polys, blocks, trunc, r, exact, conv, arith,
                        fit_tol, held_out, seed, scale)

    lin = [[0] * d for _ in range(d)]
    entries = []
    for comp, poly in enumerate(polys):
        for alpha, v in poly.items():
            dg = sum(alpha)
            val = Fraction(v) if exact else float(v)
            if dg == 1:
                lin[comp][alpha.index(1)] = val
            elif 2 <= dg <= trunc.D and blocks.y_degree(alpha) <= ell:
                if not blocks.is_stable_component(comp) and blocks.y_degree(alpha) == 0:
                    continue
                entries.append((comp, alpha, val))
    for comp in blocks.y_vars:
        for j in blocks.x_vars:
            lin[comp][j] = 0
    return jets.make_jet(blocks, trunc, lin, entries, mode=mode, require_invertible=False)


class _nullctx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _held_out_check(sampler, polys, blocks, trunc, r, exact, conv, arith, fit_tol, count, seed,
                    scale):
    if count <= 0:
        return
    rng = random.Random(seed)
    d = blocks.d
    if fit_tol is None:
        # truncation scale plus roundoff
        fit_tol = 0 if exact else 10 * float(r) ** (trunc.D + 1) + 1e-10 * scale
    worst = 0.0
    for _ in range(count):
        fr = [Fraction(rng.randint(-1000, 1000), 1000) * r * Fraction(1, 2) for _ in range(d)]
        pt = fr if exact else [arith(float(v)) if arith is float else arith(v.numerator) / v.denominator
                               for v in fr]
        val = [conv(v) for v in sampler(pt)]
        for comp, poly in enumerate(polys):
            s = arith(0)
            for alpha, c in poly.items():
                term = c
                for j, a in enumerate(alpha):
                    if a:
                        term = term * pt[j] ** a
                s += term
            worst = max(worst, abs(float(s - val[comp])))
    if worst > fit_tol:
        raise FitFailure(f"held-out residual {worst:.3e} exceeds {fit_tol:.3e}")


# ---------------------------------------------------------------------------
# Lyapunov band estimation


@dataclass(frozen=True)
class BandEstimate:
    low: tuple[float, ...]
    high: tuple[float, ...]
    chi: tuple[float, ...]
    epsilon: float
    consistent: bool | None
    ordered: bool
    samples: int

    def to_dict(self) -> dict:
        return {"low": list(self.low), "high": list(self.high), "chi": list(self.chi),
                "epsilon": self.epsilon, "consistent": self.consistent, "ordered": self.ordered,
                "samples": self.samples}


def estimate_bands(linears: Sequence, blocks: BlockStructure, *,
                   declared: SpectralData | None = None, tail: float = 0.5,
                   margin: float = 1e-9, min_samples: int = 10) -> BandEstimate:
    """Per-block exponent intervals from partial products ``L_{n-1} ... L_0``.

    For each block, ``log sigma_min / n`` and ``log sigma_max / n`` of the
    partial products are tracked (with running normalization); the interval
    is their range over the last ``tail`` fraction of ``n``.
    """
    if len(linears) < min_samples:
        raise TooFewSamples(f"need at least {min_samples} matrices, got {len(linears)}")
    mats = [np.array([[float(v) for v in row] for row in M], dtype=float) for M in linears]
    for n, M in enumerate(mats):
        if M.shape != (blocks.d, blocks.d):
            raise NotBlockDiagonal(f"matrix {n} has shape {M.shape}, expected {(blocks.d, blocks.d)}")
        if not is_block_diagonal(tuple(map(tuple, M)), blocks):
            raise NotBlockDiagonal(f"matrix {n} is not block diagonal")
    N = len(mats)
    start = max(1, int(math.floor(N * (1 - tail))))
    lows, highs = [], []
    for idx in blocks.block_vars:
        sl = np.ix_(idx, idx)
        prod = np.eye(len(idx))
        log_scale = 0.0
        lo_series, hi_series = [], []
        for n, M in enumerate(mats, start=1):
            prod = M[sl] @ prod
            c = float(np.linalg.norm(prod, 2))
            if c == 0:
                raise NotBlockDiagonal("singular block in partial product")
            prod /= c
            log_scale += math.log(c)
            s = np.linalg.svd(prod, compute_uv=False)
            lo_series.append((log_scale + math.log(s[-1])) / n)
            hi_series.append((log_scale + math.log(s[0])) / n)
        lows.append(min(lo_series[start - 1:]))
        highs.append(max(hi_series[start - 1:]))
    chi = tuple((a + b) / 2 for a, b in zip(lows, highs))
    eps = max((b - a) / 2 for a, b in zip(lows, highs)) + margin
    ordered = all(h < l2 for h, l2 in zip(highs, lows[1:]))
    consistent = None
    if declared is not None:
        de = float(declared.epsilon)
        tol = 1e-9
        consistent = len(declared.chi) == len(lows) and all(
            float(c) - de - tol <= a and b <= float(c) + de + tol
            for c, a, b in zip(declared.chi, lows, highs))
    return BandEstimate(tuple(lows), tuple(highs), chi, eps, consistent, ordered, N)

