import json
import math
from fractions import Fraction

import mpmath
import pytest

from nsnormal import jets
from nsnormal import solver as sv
from nsnormal.errors import FitFailure, InvalidParams, NotBlockDiagonal, StableLeak, TooFewSamples
from nsnormal.jets import BlockStructure, TruncationOrder
from nsnormal.resonance import SpectralData
from nsnormal.scenarios import (
    ScenarioKind,
    ScenarioSpec,
    estimate_bands,
    generate,
    jet_from_samples,
    materialize,
    scenario_generator_factory,
    steps_hash,
)

from conftest import BLOCKS_A, BLOCKS_B, spectrum_a, spectrum_b

T_A = TruncationOrder(2, 4)


def random_spec(seed=7, length=50, **params):
    return ScenarioSpec(ScenarioKind.RANDOM, spectrum_a(Fraction(1, 10)), BLOCKS_A, T_A,
                        {"seed": seed, "bound": "1/10", **params}, length)


# -- generators ------------------------------------------------------------------------------


def test_constant_scenario():
    base = {"linear": [["1/4", 0], [0, "1/2"]], "coeffs": [{"comp": 0, "alpha": [0, 2], "value": 1}]}
    spec = ScenarioSpec(ScenarioKind.CONSTANT, spectrum_b(), BLOCKS_B, TruncationOrder(0, 2),
                        {"base": base}, 30)
    cocycle = generate(spec)
    steps = cocycle.prefix(30)
    assert len(steps) == 30 and all(f == steps[0] for f in steps)
    assert steps[0].coefficient(0, (0, 2)) == 1


def test_random_scenario_deterministic_and_bounded():
    a, b = generate(random_spec()), generate(random_spec())
    assert steps_hash(a, 50) == steps_hash(b, 50)
    assert steps_hash(a, 50) != steps_hash(generate(random_spec(seed=8)), 50)
    for f in a.prefix(50):
        assert all(abs(v) <= Fraction(1, 10) for _, _, v in f.items())
        assert sv.validate_spectral(f.linear, a.spectral, a.blocks).ok


def test_random_scenario_is_prefix_stable():
    short = generate(random_spec(length=10))
    unbounded = generate(random_spec(length=None))
    assert short.prefix(10) == unbounded.prefix(10)
    assert unbounded.horizon is None


def test_random_scenario_higher_dim():
    spectral = SpectralData.in_units("log2", [-2, -1, 1], 2, Fraction(1, 10))
    blocks = BlockStructure((2, 1, 1), 2)
    spec = ScenarioSpec(ScenarioKind.RANDOM, spectral, blocks, TruncationOrder(2, 3),
                        {"seed": 1, "bound": "1/8", "density": 0.3}, 5)
    cocycle = generate(spec)
    for f in cocycle.prefix(5):
        assert sv.validate_spectral(f.linear, spectral, blocks).ok


def test_irrational_band_center_needs_epsilon():
    # e^{-log3 / 2} is irrational
    spectral = SpectralData([{"log3": "-1/2"}, {"log2": 1}], 1, Fraction(1, 50))
    spec = ScenarioSpec(ScenarioKind.RANDOM, spectral, BLOCKS_A, TruncationOrder(1, 3), {"seed": 2}, 4)
    generate(spec)
    with pytest.raises(ValueError):
        generate(ScenarioSpec(ScenarioKind.RANDOM, SpectralData([{"log3": "-1/2"}, {"log2": 1}], 1, 0),
                              BLOCKS_A, TruncationOrder(1, 3), {"seed": 2}, 4))


def test_skew_product_scenario():
    blocks = BlockStructure((2, 1), 1)
    spec = ScenarioSpec(ScenarioKind.SKEW_PRODUCT, spectrum_a(), blocks, TruncationOrder(1, 3),
                        {"seed": 3, "bound": "1/10", "terms": 2}, 40)
    cocycle = generate(spec)
    steps = cocycle.prefix(40)
    for f in steps:
        assert sv.validate_spectral(f.linear, cocycle.spectral, blocks).ok
        assert all(abs(v) <= Fraction(1, 10) for _, _, v in f.items())
    assert len({json.dumps(jets.jet_to_dict(f)) for f in steps}) == 40  # non-periodic


def test_explicit_scenario_and_errors():
    step = {"linear": [["1/2", 0], [0, 2]], "coeffs": []}
    spec = ScenarioSpec(ScenarioKind.EXPLICIT, spectrum_a(), BLOCKS_A, T_A, {"steps": [step, step]}, 2)
    assert generate(spec).horizon == 2
    with pytest.raises(InvalidParams):
        generate(ScenarioSpec(ScenarioKind.EXPLICIT, spectrum_a(), BLOCKS_A, T_A, {"steps": [step]}, 3))
    with pytest.raises(InvalidParams):
        generate(ScenarioSpec(ScenarioKind.CONSTANT, spectrum_a(), BLOCKS_A, T_A, {}, 3))
    with pytest.raises(InvalidParams):
        generate(random_spec(density=2))


def test_scenario_round_trip():
    spec = random_spec()
    back = ScenarioSpec.from_dict(json.loads(spec.to_json()))
    assert back.to_json() == spec.to_json()
    cocycle = generate(spec)
    parsed = sv.cocycle_from_dict(json.loads(json.dumps(cocycle.to_dict())), scenario_generator_factory)
    assert parsed.content_hash() == cocycle.content_hash()
    assert parsed.prefix(50) == cocycle.prefix(50)
    explicit = materialize(cocycle, 50)
    again = sv.cocycle_from_dict(json.loads(json.dumps(explicit.to_dict())))
    assert again.prefix(50) == cocycle.prefix(50)


# -- jet_from_samples ---------------------------------------------------------------------------


def test_exact_recovery_rational():
    a = jets.make_jet(BLOCKS_A, T_A, [["1/2", "1/3"], [0, 2]],
                      [(0, (2, 0), 1), (0, (1, 1), "-7/3"), (1, (0, 2), "1/5"), (0, (4, 0), 3),
                       (1, (2, 2), -1)])
    got = jet_from_samples(a, BLOCKS_A, T_A, Fraction(1, 10), mode="rational")
    assert got == a


def test_exact_recovery_float():
    a = jets.make_jet(BLOCKS_A, TruncationOrder(2, 3), [["1/2", 0], [0, 2]],
                      [(0, (2, 0), 1), (0, (1, 1), "-7/3"), (1, (0, 2), "1/5"), (0, (3, 0), 3)])
    af = a.to_mode("float")
    got = jet_from_samples(af, BLOCKS_A, a.trunc, 0.1)
    for (k, alpha, v) in a.items():
        assert abs(got.coefficient(k, alpha) - float(v)) <= 1e-12 * max(1, abs(float(v)))


def test_analytic_taylor_oracle():
    # (sin(x)/4 + x*y, y*exp(x)) at radius 1e-2, D = 3
    def sampler(v):
        x, y = v
        return (math.sin(x) / 4 + x * y, y * math.exp(x))

    t = TruncationOrder(2, 3)
    got = jet_from_samples(sampler, BLOCKS_A, t, 1e-2, stable_tol=1e-12)
    expected = {(0, (1, 0)): 0.25, (0, (1, 1)): 1.0, (0, (3, 0)): -1 / 24,
                (1, (0, 1)): 1.0, (1, (1, 1)): 1.0, (1, (2, 1)): 0.5}
    for comp in range(2):
        for alpha in jets.monomial_index(BLOCKS_A, t).exps:
            if sum(alpha) == 0 or (sum(alpha) == 1):
                continue
            want = expected.get((comp, alpha), 0.0)
            assert abs(got.coefficient(comp, alpha) - want) < 1e-10, (comp, alpha)
    assert abs(got.linear[0][0] - 0.25) < 1e-10 and abs(got.linear[1][1] - 1) < 1e-10


def test_analytic_high_degree_with_mpmath():
    def sampler(v):
        x, y = v
        return (mpmath.sin(x) / 4 + x * y, y * mpmath.exp(x))

    t = TruncationOrder(2, 5)
    # top-degree coefficients alias with degree D + extra + 1; widen the fitted region
    got = jet_from_samples(sampler, BLOCKS_A, t, 1e-2, dps=50, extra_degree=4)
    assert abs(got.coefficient(0, (5, 0)) - 1 / 480) < 1e-10
    assert abs(got.coefficient(1, (4, 1)) - 1 / 24) < 1e-10


def test_stable_leak_detected():
    def sampler(v):
        x, y = v
        return (x / 2, 2 * y + x * x)

    with pytest.raises(StableLeak):
        jet_from_samples(sampler, BLOCKS_A, TruncationOrder(2, 3), 1e-2)


def test_fit_failure_on_large_radius():
    def sampler(v):
        x, y = v
        return (math.sin(5 * x), y * math.exp(5 * x))

    with pytest.raises(FitFailure):
        jet_from_samples(sampler, BLOCKS_A, TruncationOrder(2, 2), 0.5, fit_tol=1e-6)


# -- estimate_bands ------------------------------------------------------------------------------


def test_bands_constant():
    est = estimate_bands([[[0.5, 0], [0, 2]]] * 20, BLOCKS_A)
    assert est.low[0] == pytest.approx(-math.log(2), abs=1e-12)
    assert est.high[0] == pytest.approx(-math.log(2), abs=1e-12)
    assert est.low[1] == pytest.approx(math.log(2), abs=1e-12)
    assert est.ordered
    assert est.consistent is None
    assert estimate_bands([[[0.5, 0], [0, 2]]] * 20, BLOCKS_A, declared=spectrum_a()).consistent


def test_bands_alternating_shrink():
    mats = [[[0.45 if n % 2 == 0 else 0.55, 0], [0, 2]] for n in range(400)]
    target = math.log(math.sqrt(0.45 * 0.55))
    widths = []
    for count in (20, 100, 400):
        est = estimate_bands(mats[:count], BLOCKS_A)
        assert est.low[0] <= target <= est.high[0]
        widths.append(est.high[0] - est.low[0])
    assert widths[0] > widths[1] > widths[2]


def test_bands_errors():
    with pytest.raises(TooFewSamples):
        estimate_bands([[[0.5, 0], [0, 2]]] * 5, BLOCKS_A)
    with pytest.raises(NotBlockDiagonal):
        estimate_bands([[[0.5, 1], [0, 2]]] * 20, BLOCKS_A)


def test_bands_inconsistent_declaration():
    est = estimate_bands([[[0.3, 0], [0, 2]]] * 20, BLOCKS_A, declared=spectrum_a(Fraction(1, 10)))
    assert est.consistent is False
