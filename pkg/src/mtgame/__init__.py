"""Numerical solver for two-team multitime differential games.

Values are computed on a grid over the multitime box and a state box by a
backward semi-Lagrangian march; see :mod:`mtgame.solver`.
"""

from .expr import ParseError, evaluate, parse
from .game import CATALOG, ControlSet, GameInstance, catalog_instance, sample_control_set, zero_game
from .grid import GeneratingField, MultitimeGrid, ValueField
from .hamiltonian import covering_strategy, isaacs_gap, lower_hamiltonian, upper_hamiltonian
from .kernels import BACKEND
from .solver import SolverOptions, solve, solve_lower, solve_upper

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CATALOG",
    "ControlSet",
    "GameInstance",
    "GeneratingField",
    "MultitimeGrid",
    "ParseError",
    "SolverOptions",
    "ValueField",
    "catalog_instance",
    "covering_strategy",
    "evaluate",
    "isaacs_gap",
    "lower_hamiltonian",
    "parse",
    "sample_control_set",
    "solve",
    "solve_lower",
    "solve_upper",
    "upper_hamiltonian",
    "zero_game",
]
