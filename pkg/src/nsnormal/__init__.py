"""Non-stationary normal forms for cocycles of truncated polynomial jets."""

__version__ = "0.1.0"

from .exponents import LogValue
from .group import (
    LinearBlockMap,
    LinearKind,
    Membership,
    NormalFormFactor,
    SubResonanceAut,
    group_compose,
    group_invert,
    is_member,
    random_element,
)
from .jets import BlockStructure, JetMap, TruncationOrder, compose, invert, make_jet
from .resonance import ResonanceTable, Side, SpectralData, enumerate_plus_basis, validate_margin
from .solver import CocycleSpec, NormalFormResult, SolverConfig, solve, verify_diagram

__all__ = [
    "LogValue", "LinearBlockMap", "LinearKind", "Membership", "NormalFormFactor",
    "SubResonanceAut", "group_compose", "group_invert", "is_member", "random_element",
    "BlockStructure", "JetMap", "TruncationOrder", "compose", "invert", "make_jet",
    "ResonanceTable", "Side", "SpectralData", "enumerate_plus_basis", "validate_margin",
    "CocycleSpec", "NormalFormResult", "SolverConfig", "solve", "verify_diagram",
]
