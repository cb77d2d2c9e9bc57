import sys

import pytest

from nsnormal import jets
from nsnormal.jets import BlockStructure, TruncationOrder
from nsnormal.resonance import SpectralData, enumerate_plus_basis


def spectrum_a(eps=0):
    return SpectralData.in_units("log2", [-1, 1], 1, eps)


def spectrum_b(eps=0):
    return SpectralData.in_units("log2", [-2, -1], 2, eps)


def spectrum_c(eps=0):
    return SpectralData([{"log3": -1}, {"log2": 1}], 1, eps)


BLOCKS_A = BlockStructure((1, 1), 1)
BLOCKS_B = BlockStructure((1, 1), 2)
BLOCKS_C = BlockStructure((1, 1), 1)


@pytest.fixture
def table_a():
    return enumerate_plus_basis(spectrum_a(), BLOCKS_A, 2)


@pytest.fixture
def table_b():
    return enumerate_plus_basis(spectrum_b(), BLOCKS_B, 0)


@pytest.fixture
def table_c():
    return enumerate_plus_basis(spectrum_c(), BLOCKS_C, 1)


def one_d(D=3):
    return BlockStructure((1,), 1), TruncationOrder(0, D)


def step_b(coeffs=((0, (1, 1), 1),), mode="rational"):
    """``(x1/4 + ..., x2/2)`` in spectrum B blocks with D = 2."""
    return jets.make_jet(BLOCKS_B, TruncationOrder(0, 2), [["1/4", 0], [0, "1/2"]], coeffs,
                         mode=mode)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.report_lines():
        terminalreporter.write_line(line)
