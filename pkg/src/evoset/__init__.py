"""Evolving small complementary heuristic sets for combinatorial problems.

The library is organized around a performance matrix (heuristics x instances,
lower gap is better): ``metrics`` scores subsets by the mean of per-instance
bests, ``selection`` picks complementary subsets greedily with a verified
approximation bound, ``engine`` runs the evolutionary loop over generated
programs, ``problems``/``instances`` supply evaluators and data for online bin
packing, tour construction, and capacitated routing, and ``execution`` farms
generated code out to isolated worker processes.
"""

from .core import (
    AblationFlags,
    EvolutionConfig,
    Heuristic,
    LlmSettings,
    PerformanceMatrix,
    PerformanceVector,
    Population,
    ProblemInstance,
    WorkerSettings,
    make_dedupe_key,
    new_heuristic,
)
from .metrics import CpiReport, best_per_instance, cpi, delta_cpi, manhattan_distance, rank_by_average
from .selection import (
    GreedyBoundReport,
    SelectionOutcome,
    cpm_select,
    exhaustive_best_subset,
    select_cs_parents,
    select_ls_parent,
    verify_greedy_bound,
)
from .engine import ConvergencePoint, RunState, cpi_vs_setsize, evolve_generation, initialize, run

__all__ = [
    "AblationFlags",
    "ConvergencePoint",
    "CpiReport",
    "EvolutionConfig",
    "GreedyBoundReport",
    "Heuristic",
    "LlmSettings",
    "PerformanceMatrix",
    "PerformanceVector",
    "Population",
    "ProblemInstance",
    "RunState",
    "SelectionOutcome",
    "WorkerSettings",
    "best_per_instance",
    "cpi",
    "cpi_vs_setsize",
    "cpm_select",
    "delta_cpi",
    "evolve_generation",
    "exhaustive_best_subset",
    "initialize",
    "make_dedupe_key",
    "manhattan_distance",
    "new_heuristic",
    "rank_by_average",
    "run",
    "select_cs_parents",
    "select_ls_parent",
    "verify_greedy_bound",
]

__version__ = "0.1.0"
