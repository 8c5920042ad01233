"""Three-stage stochastic / distributionally robust optimal transmission
switching: model builders, nested CCG + Dantzig-Wolfe solver, and
brute-force verification oracles."""

from .config import RunConfig, load_config
from .network import (Branch, Bus, CaseError, ConvGen, GridCase, IncidenceSet,
                      Load, VreGen, build_incidence, load_case, parse_case,
                      save_case, serialize_case)
from .solver import Solution, SolverError, SolverHandle, solve
from .uncertainty import (AmbiguitySet, ContingencyVector, ScenarioSet,
                          default_ambiguity, enumerate_support,
                          generate_scenarios, reduce_scenarios,
                          worst_case_distribution)

__all__ = [
    "AmbiguitySet", "Branch", "Bus", "CaseError", "ContingencyVector",
    "ConvGen", "GridCase", "IncidenceSet", "Load", "RunConfig", "ScenarioSet",
    "Solution", "SolverError", "SolverHandle", "VreGen", "build_incidence",
    "default_ambiguity", "enumerate_support", "generate_scenarios",
    "load_case", "load_config", "parse_case", "reduce_scenarios", "save_case",
    "serialize_case", "solve", "worst_case_distribution",
]

__version__ = "0.1.0"
