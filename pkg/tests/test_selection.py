import math

import numpy as np
import pytest

from evoset.selection import (
    SelectionError,
    cpm_select,
    exhaustive_best_subset,
    select_cs_parents,
    select_ls_parent,
    verify_greedy_bound,
)
from evoset.metrics import cpi

from conftest import make_matrix, random_matrix


class TestCpmSelect:
    def test_hand_run_greedy(self):
        # equal means -> first pick is the lowest index; then the biggest
        # clipped-improvement row
        m = make_matrix([[0.5, 0.1], [0.1, 0.5], [0.3, 0.3]])
        out = cpm_select(m, [0, 1, 2], 2)
        assert out.chosen == (0, 1)
        assert out.cpi_trace == pytest.approx((0.3, 0.1), abs=1e-12)
        assert out.first_pick_reason == "best-average"

    def test_full_selection_matches_cpi(self, rng):
        m = random_matrix(rng, 6, 5)
        out = cpm_select(m, range(6), 6)
        assert sorted(out.chosen) == list(range(6))
        assert out.cpi_trace[-1] == pytest.approx(cpi(m, range(6)).cpi, abs=1e-12)

    def test_n_one_is_best_average(self):
        m = make_matrix([[0.5, 0.5], [0.1, 0.1], [0.3, 0.3]])
        assert cpm_select(m, [0, 1, 2], 1).chosen == (1,)

    def test_zero_delta_continues_by_mean(self):
        # row 0 dominates; remaining picks ordered by mean then index
        m = make_matrix([[0.1, 0.1], [0.4, 0.4], [0.2, 0.2], [0.3, 0.3]])
        out = cpm_select(m, range(4), 3)
        assert out.chosen == (0, 2, 3)

    def test_trace_non_increasing(self, rng):
        for _ in range(100):
            m = random_matrix(rng, 8, 6)
            out = cpm_select(m, range(8), int(rng.integers(1, 9)))
            diffs = np.diff(out.cpi_trace)
            assert (diffs <= 1e-12).all()

    def test_invalid_rows_filtered(self):
        m = make_matrix([[0.5, 0.5], [math.inf, math.inf], [0.1, 0.1]])
        out = cpm_select(m, [0, 1, 2], 2)
        assert 1 not in out.chosen

    def test_shortfall_error_names_counts(self):
        m = make_matrix([[0.5, 0.5], [math.inf, math.inf]])
        with pytest.raises(SelectionError, match="need 2 valid candidates, have 1"):
            cpm_select(m, [0, 1], 2)


class TestGreedyBound:
    def test_bound_on_random_pools(self, rng):
        for _ in range(100):
            m = random_matrix(rng, 8, 10)
            report = verify_greedy_bound(m, range(8), k=4)
            assert report.bound_ok
            assert report.greedy_cpi >= report.optimal_cpi - 1e-12

    def test_k_equals_pool_size(self, rng):
        m = random_matrix(rng, 5, 6)
        report = verify_greedy_bound(m, range(5), k=5)
        assert report.bound_ok
        assert report.greedy_cpi == pytest.approx(report.optimal_cpi, abs=1e-12)

    def test_dominant_row(self):
        m = make_matrix([[0.1, 0.1, 0.1], [0.5, 0.6, 0.7], [0.6, 0.7, 0.8]])
        report = verify_greedy_bound(m, range(3), k=2)
        assert report.best_single_cpi == pytest.approx(0.1, abs=1e-12)
        assert report.greedy_cpi == pytest.approx(report.optimal_cpi, abs=1e-12)

    def test_preconditions(self, rng):
        m = random_matrix(rng, 5, 4)
        with pytest.raises(SelectionError):
            verify_greedy_bound(m, range(5), k=1)
        with pytest.raises(SelectionError):
            verify_greedy_bound(m, range(5), k=6)
        big = random_matrix(rng, 21, 4)
        with pytest.raises(SelectionError):
            verify_greedy_bound(big, range(21), k=3)

    def test_exhaustive_matches_bruteforce_scan(self, rng):
        m = random_matrix(rng, 6, 5)
        val, subset = exhaustive_best_subset(m, range(6), 3)
        assert len(subset) == 3
        assert val == pytest.approx(cpi(m, subset).cpi, abs=1e-12)
        # no better subset among a few random probes
        for _ in range(20):
            probe = rng.choice(6, size=3, replace=False)
            assert cpi(m, probe).cpi >= val - 1e-12


class TestCsParents:
    def test_largest_distance_pair(self):
        m = make_matrix([[0, 0], [0, 1], [3, 3]])
        assert select_cs_parents(m, [0, 1, 2]) == (0, 2)

    def test_distant_row_always_included(self):
        m = make_matrix([[0.2, 0.2], [0.2, 0.2], [5.0, 5.0]])
        pair = select_cs_parents(m, [0, 1, 2])
        assert 2 in pair and pair == (0, 2)  # lexicographic tie-break

    def test_two_rows(self):
        m = make_matrix([[0.1, 0.1], [0.2, 0.2]])
        assert select_cs_parents(m, [0, 1]) == (0, 1)

    def test_needs_two_valid(self):
        m = make_matrix([[0.1, 0.1], [math.inf, math.inf]])
        with pytest.raises(SelectionError):
            select_cs_parents(m, [0, 1])


class TestLsParent:
    def test_singleton_always_chosen(self, rng):
        m = make_matrix([[0.4, 0.4]])
        assert select_ls_parent(m, [0], rng) == 0

    def test_two_row_probabilities(self):
        # ranks 1,2 with n=2 -> weights 1/3, 1/4 -> probabilities 4/7, 3/7
        m = make_matrix([[0.1, 0.1], [0.9, 0.9]])
        rng = np.random.default_rng(7)
        draws = 40_000
        hits = sum(select_ls_parent(m, [0, 1], rng) == 0 for _ in range(draws))
        assert hits / draws == pytest.approx(4 / 7, abs=0.01)

    def test_three_row_frequencies_match(self):
        m = make_matrix([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]])
        n = 3
        weights = np.array([1 / (r + n) for r in (1, 2, 3)])
        probs = weights / weights.sum()
        rng = np.random.default_rng(11)
        draws = 100_000
        counts = np.zeros(3)
        for _ in range(draws):
            counts[select_ls_parent(m, [0, 1, 2], rng)] += 1
        assert np.abs(counts / draws - probs).max() < 0.01

    def test_deterministic_given_seed(self):
        m = make_matrix([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]])
        a = [select_ls_parent(m, [0, 1, 2], np.random.default_rng(3)) for _ in range(10)]
        b = [select_ls_parent(m, [0, 1, 2], np.random.default_rng(3)) for _ in range(10)]
        assert a == b
