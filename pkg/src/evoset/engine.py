"""The evolutionary loop.

One budget unit is one heuristic evaluated on the full instance set. Parse
failures and duplicate programs consume no budget (duplicates are dropped
against the whole evaluation history); every attempted evaluation does, even
when it comes back invalid. Each generation produces up to the population size
in offspring, drawing the distance-pairing operator with probability
``operator_mix`` and the refinement operator otherwise, then selects the next
population greedily by clipped-improvement gain (or by plain mean score when
that mechanism is ablated).

All randomness flows from the config seed: the loop rng is seeded from
(seed, 0) and every generator call gets its own rng seeded from
(seed, 1, call_index), so runs are reproducible regardless of how evaluation
is parallelized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .core import (
    CoreError,
    EvolutionConfig,
    Heuristic,
    PerformanceMatrix,
    PerformanceVector,
    Population,
    new_heuristic,
)
from .llm import GenerationError, Generator, ParseFailure, build_prompt, parse_reply
from .metrics import cpi
from .selection import cpm_select, select_cs_parents, select_ls_parent


class EngineError(RuntimeError):
    pass


class InitializationError(EngineError):
    def __init__(self, message: str, failures: list[str]):
        super().__init__(message + (f" (last failures: {failures[-5:]})" if failures else ""))
        self.failures = failures


class Evaluator(Protocol):
    instance_ids: tuple[str, ...]

    def evaluate(self, heuristic: Heuristic) -> PerformanceVector: ...


@dataclass(frozen=True)
class ConvergencePoint:
    evals_used: int
    population_cpi: float
    best_single_mean: float


@dataclass
class RunState:
    population: Population
    matrix: PerformanceMatrix  # every heuristic ever evaluated
    evals_used: int
    generation: int
    convergence: list[ConvergencePoint]
    rng: np.random.Generator
    heuristics: dict[str, Heuristic] = field(default_factory=dict)  # archive by id
    generator_calls: int = 0
    failure_log: list[str] = field(default_factory=list)


def _loop_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0)))


def _call_rng(seed: int, call_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 1, int(call_index))))


def _population_rows(state: RunState) -> list[int]:
    return [state.matrix.row_index(h.id) for h in state.population.members]


def _record_convergence(state: RunState) -> None:
    rows = _population_rows(state)
    report = cpi(state.matrix, rows)
    best_mean = min(float(state.matrix.scores[r].mean()) for r in rows)
    state.convergence.append(
        ConvergencePoint(
            evals_used=state.evals_used,
            population_cpi=report.cpi,
            best_single_mean=best_mean,
        )
    )


def initialize(config: EvolutionConfig, generator: Generator, evaluator: Evaluator) -> RunState:
    """Prompt for fresh heuristics until the population holds n distinct valid
    ones; duplicates and failures retry up to ``config.retries`` consecutive
    misses."""
    state = RunState(
        population=Population(members=(), generation=0),
        matrix=PerformanceMatrix.empty(tuple(evaluator.instance_ids)),
        evals_used=0,
        generation=0,
        convergence=[],
        rng=_loop_rng(config.seed),
    )
    members: list[Heuristic] = []
    seen_keys: set[str] = set()
    consecutive = 0
    while len(members) < config.population_size:
        if consecutive > config.retries:
            raise InitializationError(
                f"gave up after {consecutive} consecutive failures with "
                f"{len(members)}/{config.population_size} members",
                state.failure_log,
            )
        if state.evals_used >= config.eval_budget:
            raise InitializationError(
                "evaluation budget exhausted during initialization", state.failure_log
            )
        heuristic = _generate_offspring(state, config, generator, "init", parents=())
        if heuristic is None:
            consecutive += 1
            continue
        if heuristic.dedupe_key in seen_keys:
            state.failure_log.append(f"duplicate of {heuristic.dedupe_key}")
            consecutive += 1
            continue
        seen_keys.add(heuristic.dedupe_key)
        vector = evaluator.evaluate(heuristic)
        state.evals_used += 1
        state.matrix = state.matrix.with_row(heuristic.id, vector)
        state.heuristics[heuristic.id] = heuristic
        if vector.valid:
            members.append(heuristic)
            consecutive = 0
        else:
            state.failure_log.append(f"{heuristic.id} evaluated invalid")
            consecutive += 1
    state.population = Population(members=tuple(members), generation=0)
    _record_convergence(state)
    return state


def _generate_offspring(
    state: RunState,
    config: EvolutionConfig,
    generator: Generator,
    kind: str,
    parents: tuple[Heuristic, ...],
) -> Heuristic | None:
    """One prompt/parse/construct attempt; None on any failure (logged)."""
    prompt = build_prompt(kind, config.task, parents)
    rng = _call_rng(config.seed, state.generator_calls)
    state.generator_calls += 1
    try:
        raw = generator.generate(prompt, rng)
    except GenerationError as exc:
        state.failure_log.append(f"generation error: {exc}")
        return None
    try:
        reply = parse_reply(raw)
        return new_heuristic(
            config.task,
            id=f"h{len(state.heuristics):04d}",
            thought=reply.thought,
            code=reply.code,
            origin="init" if kind == "init" else kind,
            parent_ids=tuple(p.id for p in parents),
        )
    except (ParseFailure, CoreError) as exc:
        state.failure_log.append(f"parse failure: {exc}")
        return None


def evolve_generation(
    state: RunState,
    config: EvolutionConfig,
    generator: Generator,
    evaluator: Evaluator,
) -> RunState:
    """Produce up to n offspring (budget permitting), then select the next
    population from current members plus the new valid offspring."""
    if state.evals_used >= config.eval_budget:
        return state
    pop_rows = _population_rows(state)
    seen_keys = {h.dedupe_key for h in state.heuristics.values()}
    new_valid_rows: list[int] = []
    produced = 0
    consecutive = 0
    while produced < config.population_size and state.evals_used < config.eval_budget:
        if consecutive > config.retries:
            raise EngineError(
                f"too many consecutive generation failures ({consecutive}); "
                f"last: {state.failure_log[-3:]}"
            )
        use_cs = bool(state.rng.random() < config.effective_mix)
        if use_cs:
            a, b = select_cs_parents(state.matrix, pop_rows)
            parents = (
                state.heuristics[state.matrix.heuristic_ids[a]],
                state.heuristics[state.matrix.heuristic_ids[b]],
            )
            kind = "cs"
        else:
            r = select_ls_parent(state.matrix, pop_rows, state.rng)
            parents = (state.heuristics[state.matrix.heuristic_ids[r]],)
            kind = "ls"
        heuristic = _generate_offspring(state, config, generator, kind, parents)
        if heuristic is None:
            consecutive += 1
            continue
        produced += 1
        if heuristic.dedupe_key in seen_keys:
            continue
        seen_keys.add(heuristic.dedupe_key)
        vector = evaluator.evaluate(heuristic)
        state.evals_used += 1
        state.matrix = state.matrix.with_row(heuristic.id, vector)
        state.heuristics[heuristic.id] = heuristic
        if vector.valid:
            new_valid_rows.append(state.matrix.n_rows - 1)
            consecutive = 0
        else:
            state.failure_log.append(f"{heuristic.id} evaluated invalid")
            consecutive += 1

    candidates = pop_rows + new_valid_rows
    if config.ablation.disable_cpm:
        means = state.matrix.scores[candidates].mean(axis=1)
        order = sorted(range(len(candidates)), key=lambda k: (means[k], candidates[k]))
        next_rows = [candidates[k] for k in order[: config.population_size]]
    else:
        next_rows = list(cpm_select(state.matrix, candidates, config.population_size).chosen)
    members = tuple(state.heuristics[state.matrix.heuristic_ids[r]] for r in next_rows)
    state.population = Population(members=members, generation=state.population.generation + 1)
    state.generation += 1
    _record_convergence(state)
    return state


def run(config: EvolutionConfig, generator: Generator, evaluator: Evaluator) -> RunState:
    """Initialize, then evolve until the evaluation budget is spent."""
    state = initialize(config, generator, evaluator)
    stagnant = 0
    while state.evals_used < config.eval_budget:
        before = state.evals_used
        evolve_generation(state, config, generator, evaluator)
        if state.evals_used == before:
            stagnant += 1  # a whole generation of duplicates burns no budget
            if stagnant > config.retries:
                raise EngineError("search stagnated: no new heuristics evaluated")
        else:
            stagnant = 0
    return state


def cpi_vs_setsize(matrix: PerformanceMatrix, pool, sizes) -> list[dict]:
    """CPI of the greedy-selected subset for each requested size; the data
    series behind set-size sweep plots."""
    out = []
    for size in sizes:
        outcome = cpm_select(matrix, pool, int(size))
        out.append({"size": int(size), "cpi": outcome.cpi_trace[-1]})
    return out
