"""Scalar and vector mathematics over performance matrices.

The set score of a heuristic subset is the mean over instances of the
per-instance best (minimum) score — here called the complementary performance
index (CPI). All argmin/argmax ties break toward the lowest matrix row index
so that every quantity is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PerformanceMatrix, PerformanceVector


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class CpiReport:
    """CPI of a subset plus the per-instance bests and who supplies them."""

    cpi: float
    best_per_instance: tuple[float, ...]
    contributor: tuple[str, ...]  # heuristic id of the argmin per instance


def _checked_subset(matrix: PerformanceMatrix, subset) -> list[int]:
    idx = sorted(set(int(i) for i in subset))
    if not idx:
        raise MetricsError("empty subset")
    for i in idx:
        if not (0 <= i < matrix.n_rows):
            raise MetricsError(f"row index {i} out of range")
        if not matrix.rows[i].valid:
            raise MetricsError(f"row {i} is invalid (sentinel scores)")
    return idx


def best_per_instance(matrix: PerformanceMatrix, subset) -> np.ndarray:
    """Elementwise minimum over the subset's rows, one value per instance."""
    idx = _checked_subset(matrix, subset)
    return matrix.scores[idx].min(axis=0)


def cpi(matrix: PerformanceMatrix, subset) -> CpiReport:
    """Mean of the per-instance bests over the subset."""
    idx = _checked_subset(matrix, subset)
    block = matrix.scores[idx]
    best = block.min(axis=0)
    # argmin over rows sorted ascending -> first winner has the lowest index
    winners = np.asarray(idx)[block.argmin(axis=0)]
    contributor = tuple(matrix.heuristic_ids[w] for w in winners)
    return CpiReport(cpi=float(best.mean()), best_per_instance=tuple(best), contributor=contributor)


def delta_cpi(candidate: PerformanceVector, reference_best) -> float:
    """Summed clipped improvement of ``candidate`` over the running bests.

    Computed as the plain sum over instances of max(reference - candidate, 0),
    without dividing by the instance count; the argmax used for selection is
    unaffected by the missing 1/m factor.
    """
    if not candidate.valid:
        raise MetricsError("candidate vector is invalid")
    ref = np.asarray(reference_best, dtype=float)
    if ref.shape != (len(candidate),):
        raise MetricsError(f"length mismatch: {ref.shape[0]} reference vs {len(candidate)} scores")
    gain = ref - np.asarray(candidate.scores)
    return float(np.maximum(gain, 0.0).sum())


def manhattan_distance(a: PerformanceVector, b: PerformanceVector) -> float:
    """Sum of absolute per-instance score differences."""
    if not (a.valid and b.valid):
        raise MetricsError("distance requires valid vectors")
    if len(a) != len(b):
        raise MetricsError("length mismatch")
    return float(np.abs(np.asarray(a.scores) - np.asarray(b.scores)).sum())


def rank_by_average(matrix: PerformanceMatrix, subset) -> list[int]:
    """Row indices sorted ascending by mean score (best first), ties toward
    the lower row index."""
    idx = _checked_subset(matrix, subset)
    means = matrix.scores[np.asarray(idx)].mean(axis=1)
    order = sorted(range(len(idx)), key=lambda k: (means[k], idx[k]))
    return [idx[k] for k in order]
