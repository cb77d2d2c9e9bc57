import json
import math
from fractions import Fraction

import pytest

from nsnormal import jets
from nsnormal.errors import (
    DegenerateGrid,
    NonPositiveScale,
    ShapeMismatch,
    SingularLinear,
    SlotViolation,
    StableLeak,
)
from nsnormal.jets import BlockStructure, TruncationOrder

from conftest import BLOCKS_A, BLOCKS_B, one_d
from oracles import jet_table, oracle_compose

T_A3 = TruncationOrder(2, 3)


def x_sq(D=3, coef=1, power=2):
    b, t = one_d(D)
    return jets.make_jet(b, t, [[1]], [(0, (power,), coef)])


# -- construction ------------------------------------------------------------------


def test_identity_1d():
    b, t = one_d()
    a = jets.make_jet(b, t, [[1]])
    assert a == jets.identity(b, t)
    assert a.is_linear


def test_pure_x_in_y_component_rejected():
    with pytest.raises(SlotViolation):
        jets.make_jet(BLOCKS_A, T_A3, [[1, 0], [0, 1]], [(1, (2, 0), 1)])


def test_constant_and_linear_slots_rejected():
    with pytest.raises(SlotViolation):
        jets.make_jet(BLOCKS_A, T_A3, None, [(0, (0, 0), 1)])
    with pytest.raises(SlotViolation):
        jets.make_jet(BLOCKS_A, T_A3, None, [(0, (1, 0), 1)])


def test_degree_overflow_strict_and_lenient():
    with pytest.raises(SlotViolation):
        jets.make_jet(BLOCKS_A, T_A3, None, [(0, (4, 0), 1)])
    a = jets.make_jet(BLOCKS_A, T_A3, None, [(0, (4, 0), 1), (0, (2, 0), 1)], strict=False)
    assert a.slots() == [(0, (2, 0))]


def test_stable_leak_and_singular():
    with pytest.raises(StableLeak):
        jets.make_jet(BLOCKS_A, T_A3, [[1, 0], [1, 1]])
    with pytest.raises(SingularLinear):
        jets.make_jet(BLOCKS_A, T_A3, [[0, 0], [0, 1]])


def test_solver_example_jet_valid():
    a = jets.make_jet(BLOCKS_B, TruncationOrder(0, 2), [["1/4", 0], [0, "1/2"]], [(0, (1, 1), 1)])
    assert a.coefficient(0, (1, 1)) == 1


# -- composition and inversion ----------------------------------------------------------


def test_compose_1d_example():
    a = x_sq()
    assert jets.compose(a, a) == x_sq() + x_sq().nonlinear_part() + x_sq(coef=2, power=3).nonlinear_part()
    assert jet_table(jets.compose(a, a)) == {(0, (1,)): 1, (0, (2,)): 2, (0, (3,)): 2}


def test_compose_identity():
    a = jets.make_jet(BLOCKS_A, T_A3, [["1/2", 3], [0, 2]], [(0, (0, 2), 1), (1, (1, 1), -2)])
    ident = jets.identity(BLOCKS_A, T_A3)
    assert jets.compose(ident, a) == a
    assert jets.compose(a, ident) == a


def test_compose_spectrum_a_example():
    outer = jets.make_jet(BLOCKS_A, T_A3, None, [(0, (0, 2), 1)])
    inner = jets.make_jet(BLOCKS_A, T_A3, None, [(0, (1, 1), 1)])
    got = jets.compose(outer, inner)
    assert jet_table(got) == {(0, (1, 0)): 1, (1, (0, 1)): 1, (0, (1, 1)): 1, (0, (0, 2)): 1}


def test_compose_matches_symbolic_oracle():
    t = TruncationOrder(2, 4)
    a = jets.make_jet(BLOCKS_A, t, [["1/2", 1], [0, 3]],
                      [(0, (2, 0), 1), (0, (0, 2), "-1/3"), (1, (1, 1), 2), (1, (0, 2), "1/5")])
    b = jets.make_jet(BLOCKS_A, t, [[2, 0], [0, "1/3"]],
                      [(0, (1, 1), "7/2"), (0, (3, 0), 1), (1, (2, 1), -1), (1, (1, 2), 4)])
    assert jet_table(jets.compose(a, b)) == oracle_compose(a, b)
    assert jet_table(jets.compose(b, a)) == oracle_compose(b, a)


def test_invert_1d_example():
    inv = jets.invert(x_sq())
    assert jet_table(inv) == {(0, (1,)): 1, (0, (2,)): -1, (0, (3,)): 2}


def test_invert_examples():
    b, t = one_d()
    assert jets.invert(jets.identity(b, t)) == jets.identity(b, t)
    a = jets.make_jet(BLOCKS_A, T_A3, None, [(0, (0, 2), 1)])
    assert jets.invert(a) == jets.make_jet(BLOCKS_A, T_A3, None, [(0, (0, 2), -1)])


def test_inverse_composes_to_identity():
    t = TruncationOrder(2, 5)
    a = jets.make_jet(BLOCKS_A, t, [["1/2", 1], [0, 3]],
                      [(0, (2, 0), 1), (0, (0, 2), "-1/3"), (1, (1, 1), 2), (0, (3, 2), 5)])
    ident = jets.identity(BLOCKS_A, t)
    assert jets.compose(a, jets.invert(a)) == ident
    assert jets.compose(jets.invert(a), a) == ident


def test_singular_inverse():
    a = jets.make_jet(BLOCKS_A, T_A3, [[0, 0], [0, 1]], require_invertible=False)
    with pytest.raises(SingularLinear):
        jets.invert(a)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        jets.compose(jets.identity(BLOCKS_A, T_A3), jets.identity(BLOCKS_A, TruncationOrder(2, 4)))


# -- conjugation, rescaling, evaluation ----------------------------------------------------


def test_conjugate_examples():
    L = [["1/2", 0], [0, 2]]
    a = jets.offset(BLOCKS_A, T_A3, [(0, (2, 0), 1)])
    assert jets.conjugate_linear(a, L) == jets.offset(BLOCKS_A, T_A3, [(0, (2, 0), "1/2")])
    a = jets.offset(BLOCKS_A, T_A3, [(0, (0, 2), 1)])
    assert jets.conjugate_linear(a, L) == jets.offset(BLOCKS_A, T_A3, [(0, (0, 2), 8)])
    ident = jets.identity(BLOCKS_A, T_A3)
    assert jets.conjugate_linear(ident, L) == ident


def test_conjugate_general_path_matches_composition():
    blocks = BlockStructure((2, 1), 1)
    t = TruncationOrder(1, 3)
    a = jets.offset(blocks, t, [(0, (1, 1, 0), 1), (2, (1, 0, 1), "1/3")])
    L = [[Fraction(3, 5), Fraction(-4, 5), 0], [Fraction(4, 5), Fraction(3, 5), 0], [0, 0, 2]]
    Lj = jets.linear_map(blocks, t, L)
    Linv = jets.invert(Lj)
    assert jets.conjugate_linear(a, L) == jets.compose_all(Linv, a, Lj)


def test_rescale_examples():
    assert jets.rescale(x_sq(), 10) == x_sq(coef=Fraction(1, 10))
    assert jets.rescale(x_sq(power=3), 10) == x_sq(power=3, coef=Fraction(1, 100))
    assert jets.rescale(x_sq(), 1) == x_sq()
    with pytest.raises(NonPositiveScale):
        jets.rescale(x_sq(), 0)


def test_evaluate_examples():
    ident = jets.identity(BLOCKS_A, T_A3, "float")
    assert jets.evaluate(ident, (0.3, -0.2)) == (0.3, -0.2)
    assert jets.evaluate(x_sq(), (2,)) == (6,)
    f = jets.make_jet(BLOCKS_A, T_A3, [["1/4", 0], [0, "1/2"]], [(0, (1, 1), 1)])
    assert f((1, 1)) == (Fraction(5, 4), Fraction(1, 2))
    assert f((1.0, 1.0)) == (1.25, 0.5)
    with pytest.raises(ShapeMismatch):
        f((1, 2, 3))


def test_coeff_norm_examples():
    assert jets.coeff_norm(jets.identity(BLOCKS_A, T_A3)) == 0
    assert jets.coeff_norm(jets.make_jet(BLOCKS_A, T_A3, None, [(0, (2, 0), 1)])) == 1
    a = jets.compose(x_sq(), x_sq())
    assert jets.coeff_norm(a, {2: 1, 3: Fraction(1, 4)}) == 2
    assert jets.coeff_norm(a, {(0, (3,)): 10}) == 20
    assert jets.coeff_norm(a, lambda k, alpha: 1) == 2


# -- ray fits ------------------------------------------------------------------------------

GRID = [10.0 ** (-k / 2) for k in range(2, 9)]


def test_ray_identical_is_infinite():
    assert jets.ray_residual_order(x_sq(), x_sq(), [1], GRID) == math.inf


def test_ray_single_monomial():
    b, t = one_d(5)
    a = jets.make_jet(b, t, [[1]], [(0, (3,), 1)])
    assert abs(jets.ray_residual_order(a, jets.identity(b, t), [1], GRID) - 3) < 0.05


def test_ray_fifth_order():
    b, t = one_d(5)
    a = jets.make_jet(b, t, [[1]], [(0, (2,), 1), (0, (5,), 1)])
    c = jets.make_jet(b, t, [[1]], [(0, (2,), 1)])
    assert abs(jets.ray_residual_order(a, c, [1], GRID) - 5) < 0.05
    # float evaluation of the two maps separately reaches the same answer here
    assert abs(jets.ray_residual_order(a.to_mode("float"), c.to_mode("float"), [1], GRID) - 5) < 0.05


def test_ray_degenerate_grids():
    a = x_sq()
    with pytest.raises(DegenerateGrid):
        jets.ray_residual_order(a, a, [1], [0.1, 0.01, 0.001])
    with pytest.raises(DegenerateGrid):
        jets.ray_residual_order(a, a, [1], [0.001, 0.01, 0.1, 1.0])
    with pytest.raises(DegenerateGrid):
        jets.ray_residual_order(a, a, [0], GRID)


# -- serialization -------------------------------------------------------------------------


def test_json_round_trip_is_bit_exact():
    a = jets.make_jet(BLOCKS_A, T_A3, [["1/2", "1/3"], [0, 2]],
                      [(1, (1, 1), "-7/3"), (0, (0, 2), 1), (0, (2, 0), "5/11")])
    text = json.dumps(jets.jet_to_dict(a))
    b = jets.jet_from_dict(json.loads(text))
    assert b == a
    assert json.dumps(jets.jet_to_dict(b)) == text
    f = a.to_mode("float")
    assert jets.jet_from_dict(json.loads(json.dumps(jets.jet_to_dict(f)))) == f


def test_canonical_order_is_graded():
    a = jets.make_jet(BLOCKS_A, T_A3, None, [(0, (1, 2), 1), (0, (2, 0), 1), (0, (0, 2), 1)])
    degs = [sum(alpha) for _, alpha, _ in a.items()]
    assert degs == sorted(degs)


def test_ell_zero_keeps_transversal_linear_part():
    # modulo (y): only the linear part sees y
    blocks = BlockStructure((1, 1), 1)
    t = TruncationOrder(0, 3)
    f = jets.make_jet(blocks, t, [["1/2", 1], [0, 2]], [(0, (2, 0), 1), (0, (3, 0), -1)])
    g = jets.make_jet(blocks, t, [[3, 0], [0, "1/3"]], [(0, (2, 0), 2)])
    assert jets.compose(jets.compose(f, g), jets.invert(g)) == f
    with pytest.raises(SlotViolation):
        jets.make_jet(blocks, t, None, [(0, (1, 1), 1)])
