"""Greedy complementary selection and parent choice for the two reproduction
operators.

``cpm_select`` implements the population-management rule: seed with the best
average row, then repeatedly add the row with the largest summed clipped
improvement over the running per-instance bests. ``verify_greedy_bound`` checks
the greedy guarantee against an exhaustive subset enumeration; the enumeration
lives here (size-guarded) rather than in the tests so it can double as a
research tool through the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .core import PerformanceMatrix
from .metrics import manhattan_distance, rank_by_average


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionOutcome:
    chosen: tuple[int, ...]  # matrix row indices, selection order preserved
    cpi_trace: tuple[float, ...]  # CPI after each pick; non-increasing
    first_pick_reason: str = "best-average"


@dataclass(frozen=True)
class GreedyBoundReport:
    best_single_cpi: float
    greedy_cpi: float
    optimal_cpi: float
    optimal_subset: tuple[int, ...]
    bound_ok: bool


def _valid_candidates(matrix: PerformanceMatrix, candidates) -> list[int]:
    seen = set()
    out = []
    for i in candidates:
        i = int(i)
        if not (0 <= i < matrix.n_rows):
            raise SelectionError(f"row index {i} out of range")
        if i in seen:
            continue
        seen.add(i)
        if matrix.rows[i].valid:
            out.append(i)
    return out


def cpm_select(matrix: PerformanceMatrix, candidates, n: int) -> SelectionOutcome:
    """Pick ``n`` rows: best-average first, then argmax of the clipped
    improvement sum, updating the per-instance reference bests after each
    pick. Ties break toward the lowest row index; once no candidate improves
    any instance, remaining picks follow (mean score, index) order."""
    if n < 1:
        raise SelectionError("n must be >= 1")
    valid = _valid_candidates(matrix, candidates)
    if len(valid) < n:
        raise SelectionError(f"need {n} valid candidates, have {len(valid)}")

    scores = matrix.scores
    means = {i: float(scores[i].mean()) for i in valid}

    first = min(valid, key=lambda i: (means[i], i))
    chosen = [first]
    reference = scores[first].copy()
    trace = [float(reference.mean())]
    remaining = [i for i in valid if i != first]

    while len(chosen) < n:
        gains = {i: float(np.maximum(reference - scores[i], 0.0).sum()) for i in remaining}
        best_gain = max(gains.values())
        if best_gain > 0.0:
            pick = min((i for i in remaining if gains[i] == best_gain))
        else:
            pick = min(remaining, key=lambda i: (means[i], i))
        chosen.append(pick)
        remaining.remove(pick)
        reference = np.minimum(reference, scores[pick])
        trace.append(float(reference.mean()))

    return SelectionOutcome(chosen=tuple(chosen), cpi_trace=tuple(trace))


def exhaustive_best_subset(matrix: PerformanceMatrix, pool, k: int) -> tuple[float, tuple[int, ...]]:
    """Brute-force optimum over all size-k subsets of ``pool``. Guarded to
    pools of at most 20 rows; intended for verification, not production runs."""
    valid = _valid_candidates(matrix, pool)
    if len(valid) > 20:
        raise SelectionError(f"pool of {len(valid)} rows too large for enumeration")
    if not (1 <= k <= len(valid)):
        raise SelectionError(f"k={k} outside [1, {len(valid)}]")
    scores = matrix.scores
    best_val = math.inf
    best_subset: tuple[int, ...] = ()
    for subset in combinations(valid, k):
        val = float(scores[list(subset)].min(axis=0).mean())
        if val < best_val:
            best_val = val
            best_subset = subset
    return best_val, best_subset


def verify_greedy_bound(matrix: PerformanceMatrix, pool, k: int) -> GreedyBoundReport:
    """Check the greedy guarantee
    F(single best) - F(greedy) >= (1 - k/(e*k - e)) * (F(single best) - F(opt))
    with F(opt) from exhaustive enumeration. Requires k >= 2 (the coefficient
    is undefined at k = 1) and a pool small enough to enumerate."""
    valid = _valid_candidates(matrix, pool)
    if k <= 1:
        raise SelectionError("k must be >= 2 (bound coefficient undefined at k=1)")
    if k > len(valid):
        raise SelectionError(f"k={k} exceeds pool size {len(valid)}")
    if len(valid) > 20:
        raise SelectionError(f"pool of {len(valid)} rows too large for enumeration")

    scores = matrix.scores
    means = scores[valid].mean(axis=1)
    single = valid[int(np.argmin(means))]  # argmin picks the lowest index on ties
    f_single = float(scores[single].mean())

    outcome = cpm_select(matrix, valid, k)
    f_greedy = outcome.cpi_trace[-1]
    f_opt, opt_subset = exhaustive_best_subset(matrix, valid, k)

    coeff = 1.0 - k / (math.e * k - math.e)
    bound_ok = (f_single - f_greedy) >= coeff * (f_single - f_opt) - 1e-9
    return GreedyBoundReport(
        best_single_cpi=f_single,
        greedy_cpi=f_greedy,
        optimal_cpi=f_opt,
        optimal_subset=opt_subset,
        bound_ok=bound_ok,
    )


def select_cs_parents(matrix: PerformanceMatrix, population_rows) -> tuple[int, int]:
    """The unordered pair of rows with the largest Manhattan distance between
    their score vectors; ties toward the lexicographically smallest pair."""
    valid = _valid_candidates(matrix, population_rows)
    if len(valid) < 2:
        raise SelectionError("distance pairing needs at least 2 valid rows")
    best_pair: tuple[int, int] | None = None
    best_dist = -1.0
    for a_pos in range(len(valid)):
        for b_pos in range(a_pos + 1, len(valid)):
            a, b = valid[a_pos], valid[b_pos]
            d = manhattan_distance(matrix.rows[a], matrix.rows[b])
            if d > best_dist:
                best_dist = d
                best_pair = (a, b)
    assert best_pair is not None
    return best_pair


def select_ls_parent(matrix: PerformanceMatrix, population_rows, rng: np.random.Generator) -> int:
    """Rank-weighted random draw: weight 1/(rank + n) with rank 1 = best
    average; better-ranked rows are proportionally more likely."""
    ranked = rank_by_average(matrix, population_rows)
    n = len(ranked)
    weights = np.array([1.0 / (rank + n) for rank in range(1, n + 1)])
    probs = weights / weights.sum()
    pos = int(rng.choice(n, p=probs))
    return ranked[pos]
