import itertools
from fractions import Fraction

import pytest
import sympy as sp

from nsnormal import jets
from nsnormal.errors import EpsilonTooLarge, LinearPartPresent
from nsnormal.exponents import LogValue
from nsnormal.jets import BlockStructure, TruncationOrder
from nsnormal.resonance import (
    Side,
    SpectralData,
    classify_slot,
    enumerate_plus_basis,
    exponent,
    off_side_norm,
    project,
    split_sides,
    validate_margin,
)

from conftest import BLOCKS_A, BLOCKS_B, BLOCKS_C, spectrum_a, spectrum_b, spectrum_c
from oracles import brute_plus_slots

L2 = LogValue.log(2)


# -- exponents and classification ---------------------------------------------------------


def test_exponent_examples():
    assert exponent(0, (0, 2), spectrum_a()) == L2 * 3
    assert exponent(0, (0, 2), spectrum_a()).exp_rational() == 8
    assert exponent(0, (0, 2), spectrum_b()).is_zero()
    for k in range(2):
        unit = tuple(1 if j == k else 0 for j in range(2))
        assert exponent(k, unit, spectrum_a()).is_zero()


def test_classify_examples():
    assert classify_slot(0, (2, 0), spectrum_a(), 2) is Side.MINUS
    assert exponent(0, (2, 0), spectrum_a()) == -L2
    assert classify_slot(0, (0, 2), spectrum_a(), 2) is Side.PLUS
    assert classify_slot(0, (0, 2), spectrum_b(), 0) is Side.PLUS


# -- enumeration ---------------------------------------------------------------------------


def test_spectrum_a_basis(table_a):
    comp0 = [(1, 1), (2, 1), (0, 2), (1, 2), (2, 2), (3, 2)]
    comp1 = [(0, 2), (1, 2)]
    expected = sorted([(0, a) for a in comp0] + [(1, a) for a in comp1])
    assert sorted(table_a.plus_basis) == expected
    assert table_a.r_min == 3
    assert sorted(table_a.resonant_slots) == [(0, (2, 1)), (0, (3, 2)), (1, (1, 2))]


def test_spectrum_b_basis(table_b):
    assert table_b.plus_basis == ((0, (0, 2)),)
    assert table_b.resonant_slots == ((0, (0, 2)),)
    assert table_b.r_min == 2


def test_contracting_1d_is_empty():
    spec = SpectralData.in_units("log2", [-1], 1)
    table = enumerate_plus_basis(spec, BlockStructure((1,), 1), 0)
    assert table.plus_basis == ()
    assert table.r_min == 0


LOG2, LOG3 = sp.log(2), sp.log(3)


@pytest.mark.parametrize("units, chi, m_s, dims, ell", [
    ([{"log2": -1}, {"log2": 1}], [-LOG2, LOG2], 1, (1, 1), 2),
    ([{"log2": -2}, {"log2": -1}], [-2 * LOG2, -LOG2], 2, (1, 1), 0),
    ([{"log3": -1}, {"log2": 1}], [-LOG3, LOG2], 1, (1, 1), 1),
    ([{"log2": -1}, {}], [-LOG2, sp.Integer(0)], 1, (1, 1), 2),
    ([{"log2": -3}, {"log2": -1}, {"log3": 1}], [-3 * LOG2, -LOG2, LOG3], 2, (1, 1, 1), 1),
    ([{"log2": -1}, {"log3": "1/2"}], [-LOG2, LOG3 / 2], 1, (2, 1), 1),
    ([{"log5": -1, "1": "1/10"}, {"log2": 1}], [-sp.log(5) + sp.Rational(1, 10), LOG2], 1, (1, 1), 2),
])
def test_enumeration_matches_brute_force(units, chi, m_s, dims, ell):
    table = enumerate_plus_basis(SpectralData(units, m_s, 0), BlockStructure(dims, m_s), ell)
    # twice the analytic bound, and never less than ten
    found, resonant = brute_plus_slots(chi, m_s, dims, ell, max(10, 2 * table.x_cutoff))
    assert sorted(table.plus_basis) == found
    assert sorted(table.resonant_slots) == resonant


def test_classification_is_block_coarse():
    blocks = BlockStructure((2, 1), 1)
    table = enumerate_plus_basis(SpectralData.in_units("log2", [-1, 1], 1), blocks, 2)
    for comp in range(3):
        for alpha in itertools.product(range(4), range(4), range(3)):
            if sum(alpha) < 2 or (comp == 2 and alpha[2] == 0):
                continue
            swapped = (alpha[1], alpha[0], alpha[2])
            assert table.classify(comp, alpha) is table.classify(comp, swapped)
            if comp < 2:
                assert table.classify(comp, alpha) is table.classify(1 - comp, alpha)


def test_rows_and_lossless(table_a):
    rows = table_a.to_rows()
    assert len(rows) == 8
    assert sum(r["resonant"] for r in rows) == 3
    assert table_a.lossless_for(TruncationOrder(2, 5))
    assert not table_a.lossless_for(TruncationOrder(2, 4))
    assert len(table_a.plus_slots_within(TruncationOrder(2, 3))) == 6


# -- projections ---------------------------------------------------------------------------


def test_project_examples(table_a, table_b):
    t = TruncationOrder(2, 3)
    z = jets.zero_map(BLOCKS_A, t)
    assert project(z, Side.PLUS, table_a) == z
    a = jets.offset(BLOCKS_A, t, [(0, (2, 0), 1), (0, (0, 2), 1)])
    plus, minus = split_sides(a, table_a)
    assert plus == jets.offset(BLOCKS_A, t, [(0, (0, 2), 1)])
    assert minus == jets.offset(BLOCKS_A, t, [(0, (2, 0), 1)])
    tb = TruncationOrder(0, 3)
    b = jets.offset(BLOCKS_B, tb, [(0, (1, 1), 1), (0, (0, 2), 1)])
    plus, minus = split_sides(b, table_b)
    assert plus == jets.offset(BLOCKS_B, tb, [(0, (0, 2), 1)])
    assert minus == jets.offset(BLOCKS_B, tb, [(0, (1, 1), 1)])


def test_project_laws(table_a):
    a = jets.offset(BLOCKS_A, TruncationOrder(2, 4),
                    [(0, (2, 0), 1), (0, (0, 2), "1/3"), (1, (1, 1), -2), (0, (3, 1), 5), (1, (1, 2), 7)])
    plus, minus = split_sides(a, table_a)
    assert plus + minus == a
    assert project(plus, Side.PLUS, table_a) == plus
    assert project(plus, Side.MINUS, table_a) == jets.zero_map(BLOCKS_A, a.trunc)
    assert off_side_norm(a, Side.PLUS, table_a) == 5


def test_project_rejects_linear(table_a):
    with pytest.raises(LinearPartPresent):
        project(jets.identity(BLOCKS_A, TruncationOrder(2, 3)), Side.PLUS, table_a)


def test_eigen_relation(table_a):
    t = TruncationOrder(2, 5)
    L = [["1/2", 0], [0, 2]]
    for comp in range(2):
        for alpha in jets.monomial_index(BLOCKS_A, t).exps:
            if sum(alpha) < 2 or (comp == 1 and alpha[1] == 0):
                continue
            a = jets.offset(BLOCKS_A, t, [(comp, alpha, 1)])
            got = jets.conjugate_linear(a, L).coefficient(comp, alpha)
            assert got == table_a.exponent_of(comp, alpha).exp_rational()


# -- margins -------------------------------------------------------------------------------


def test_margin_spectrum_c():
    report = validate_margin(spectrum_c(), BLOCKS_C, 1)
    assert report.resonant == ()
    # attained at component 0, n = (2, 1): |log2 - log3| / 4
    assert report.eps_max == (LogValue.log(3) - L2) / 4
    assert report.argmin == (0, (2, 1))
    assert report.ok


def test_margin_spectrum_c_epsilon_above_max():
    report = validate_margin(spectrum_c(Fraction(1, 4)), BLOCKS_C, 1)
    assert not report.ok


def test_margin_spectrum_b_resonant():
    for eps in (0, Fraction(1, 100)):
        report = validate_margin(SpectralData.in_units("log2", [-2, -1], 2, eps), BLOCKS_B, 0)
        assert report.resonant == ((0, (0, 2)),)
        assert not report.ok


def test_margin_spectrum_a_resonant():
    report = validate_margin(spectrum_a(), BLOCKS_A, 2)
    assert (0, (3, 2)) in report.resonant and (1, (1, 2)) in report.resonant
    assert sorted(report.resonant) == [(0, (2, 1)), (0, (3, 2)), (1, (1, 2))]


def test_epsilon_too_large():
    with pytest.raises(EpsilonTooLarge):
        validate_margin(spectrum_a(1), BLOCKS_A, 2)


@pytest.mark.parametrize("chi", [
    [{"log2": -1}, {"log3": 1}],
    [{"log3": -1}, {"log2": 1}],
    [{"log5": "-1/3"}, {"log2": 2}],
])
def test_margin_is_sharp_on_small_example(chi):
    # exact minimum of |E|/(1+|n|) over a generous slot range, ell = 1
    spectral = SpectralData(chi, 1, 0)
    report = validate_margin(spectral, BLOCKS_C, 1)
    best = None
    for comp, n1, n2 in itertools.product(range(2), range(0, 80), range(0, 2)):
        if n1 + n2 < 2 or (comp == 1 and n2 == 0):
            continue
        E = exponent(comp, (n1, n2), spectral)
        if E.is_zero():
            continue
        q = abs(E) / (1 + n1 + n2)
        best = q if best is None or q < best else best
    assert report.eps_max == best
