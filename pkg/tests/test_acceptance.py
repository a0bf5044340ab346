"""Acceptance suite: one test per criterion, each printing a PASS line and
pinned to its stated tolerance and runtime budget.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The bin-packing reproduction criterion documents its generation seed
inline; see the README's known-results section for its current status.
"""

import json
import time

import numpy as np
import pytest

from evoset.core import EvolutionConfig, PerformanceVector, WorkerSettings, new_heuristic
from evoset.engine import cpi_vs_setsize
from evoset.artifacts import load_matrix, run_experiment
from evoset.execution import WorkerPool, evaluate_on_set
from evoset.instances import GeneratorSpec, ObpSpec, generate, training_spec
from evoset.metrics import cpi, delta_cpi
from evoset.problems import (
    BUILTIN_SOURCE,
    builtin,
    cvrp_optimal_length,
    eval_cvrp,
    eval_obp,
    eval_tsp,
    obp_optimal_bins,
    tsp_optimal_length,
    verify_trace,
)
from evoset.selection import verify_greedy_bound

from conftest import random_matrix

TRAINING_SEED = 20240501  # documented seed for the regenerated training set


def _report(name: str) -> None:
    print(f"[acceptance] {name}: PASS")


class TestSetScoreProperties:
    def test_monotonicity_and_supermodularity_battery(self):
        """1,000 random matrices: no monotonicity or supermodularity
        violation beyond 1e-12; runtime under 5 s."""
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        violations = 0
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(2, 13))
            matrix = random_matrix(rng, n, m)
            perm = list(rng.permutation(n))
            u_size = int(rng.integers(1, n))
            v_size = int(rng.integers(u_size, n))
            u, v = perm[:u_size], perm[:v_size]
            extension = perm[-1]
            f_u = cpi(matrix, u).cpi
            f_v = cpi(matrix, v).cpi
            if not (f_u >= f_v - 1e-12):
                violations += 1
            gain_u = f_u - cpi(matrix, u + [extension]).cpi
            gain_v = f_v - cpi(matrix, v + [extension]).cpi
            if not (gain_u >= gain_v - 1e-12):
                violations += 1
        elapsed = time.perf_counter() - start
        assert violations == 0
        assert elapsed < 5.0, f"property battery took {elapsed:.2f}s"
        _report(f"monotonicity/supermodularity on 1000 matrices in {elapsed:.2f}s")

    def test_greedy_bound_battery(self):
        """200 random 8x10 pools at k=4: the greedy guarantee holds on every
        trial; the greedy-equals-optimal fraction is logged. Runtime < 10 s."""
        rng = np.random.default_rng(42)
        start = time.perf_counter()
        failures = 0
        exact = 0
        for _ in range(200):
            matrix = random_matrix(rng, 8, 10)
            report = verify_greedy_bound(matrix, range(8), k=4)
            if not report.bound_ok:
                failures += 1
            if abs(report.greedy_cpi - report.optimal_cpi) <= 1e-12:
                exact += 1
        elapsed = time.perf_counter() - start
        assert failures == 0
        assert elapsed < 10.0, f"bound battery took {elapsed:.2f}s"
        _report(
            f"greedy bound on 200 pools in {elapsed:.2f}s "
            f"(greedy == optimal in {exact}/200 trials)"
        )

    def test_gain_link(self):
        """1,000 random (subset, candidate) pairs: the selection gain equals
        m times the set-score drop to within 1e-12."""
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(2, 13))
            matrix = random_matrix(rng, n, m)
            size = int(rng.integers(1, n))
            subset = list(rng.choice(n, size=size, replace=False))
            others = [i for i in range(n) if i not in subset]
            h = int(rng.choice(others))
            report = cpi(matrix, subset)
            drop = report.cpi - cpi(matrix, subset + [h]).cpi
            delta = delta_cpi(matrix.rows[h], report.best_per_instance)
            worst = max(worst, abs(delta - m * drop))
        assert worst <= 1e-12, f"worst gain-link residual {worst:.3e}"
        _report(f"gain link on 1000 pairs (worst residual {worst:.2e})")


class TestBinPackingReproduction:
    def test_first_fit_best_fit_group_means(self):
        """Regenerated 128-instance Weibull training set: first-fit and
        best-fit group means within +-30% of the published training cells.

        The generation recipe is pinned (shape in {1,3,5}, scale in
        {5,10,20,40,80} drawn per instance, sizes rounded and clamped to
        [1,100], threshold lower bound). Runtime < 60 s.
        """
        start = time.perf_counter()
        instances = generate(training_spec("obp"), seed=TRAINING_SEED)
        assert len(instances) == 128
        groups = {"200-500": [], "500-1k": [], "1k-2k": []}
        ff, bf = builtin("first_fit"), builtin("best_fit")
        gaps = {"ff": {k: [] for k in groups}, "bf": {k: [] for k in groups}}
        for inst in instances:
            n = len(inst.payload.items)
            key = "200-500" if n <= 500 else ("500-1k" if n <= 1000 else "1k-2k")
            gaps["ff"][key].append(eval_obp(ff, inst).gap)
            gaps["bf"][key].append(eval_obp(bf, inst).gap)
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"reproduction run took {elapsed:.2f}s"

        targets = {
            "ff": {"200-500": 0.0652, "500-1k": 0.0318, "1k-2k": 0.0387},
            "bf": {"200-500": 0.0627, "500-1k": 0.0310, "1k-2k": 0.0372},
        }
        lines = []
        misses = []
        for rule in ("ff", "bf"):
            for group, target in targets[rule].items():
                measured = float(np.mean(gaps[rule][group]))
                lines.append(f"{rule} {group}: measured {measured:.4f} target {target:.4f}")
                if not (0.7 * target <= measured <= 1.3 * target):
                    misses.append(lines[-1])
        detail = "; ".join(lines)
        status = "PASS" if not misses else "FAIL"
        print(f"[acceptance] bin-packing baseline reproduction ({elapsed:.1f}s): {status}")
        assert not misses, (
            "group means outside the +-30% band: "
            + "; ".join(misses)
            + " | all: "
            + detail
            + " | The documented generation recipe underestimates the published "
            "training cells (analysis in the project notes); the same generator "
            "reproduces the published testing columns closely."
        )


class TestSmallInstanceOracles:
    def test_obp_oracle_equivalence(self):
        """200 random instances with <= 10 items: the lower bound never
        exceeds the exhaustive optimum and first fit never beats it."""
        rng = np.random.default_rng(11)
        ff = builtin("first_fit")
        for _ in range(200):
            n = int(rng.integers(1, 11))
            items = rng.integers(1, 101, n).astype(float)
            from evoset.problems import obp_lower_bound_items
            from evoset.core import ObpPayload, ProblemInstance

            payload = ObpPayload(items=tuple(items), capacity=100.0)
            lb = obp_lower_bound_items(payload.items, 100.0)
            inst = ProblemInstance(id="x", task="obp", payload=payload, baseline=lb)
            opt = obp_optimal_bins(items, 100.0)
            assert lb <= opt + 1e-9
            result = eval_obp(ff, inst)
            assert result.violation is None
            assert result.raw >= opt
            assert verify_trace(inst, result.trace) == result.raw
        _report("bin-packing bound/oracle agreement on 200 small instances")

    def test_tsp_oracle_equivalence(self):
        """100 random instances with n <= 9: the built-in decider never beats
        the exhaustive optimum and its tours verify."""
        from evoset.core import ProblemInstance, TspPayload
        from evoset.instances import euclidean_matrix
        from evoset.problems import tsp_baseline_from_matrix

        rng = np.random.default_rng(13)
        nearest = builtin("tsp_nearest")
        for _ in range(100):
            n = int(rng.integers(4, 10))
            coords = rng.uniform(0, 1, (n, 2))
            dist = euclidean_matrix(coords)
            inst = ProblemInstance(
                id="x", task="tsp",
                payload=TspPayload(dist=dist, coords=coords),
                baseline=tsp_baseline_from_matrix(dist),
            )
            result = eval_tsp(nearest, inst)
            assert result.violation is None
            assert result.raw >= tsp_optimal_length(dist) - 1e-9
            assert verify_trace(inst, result.trace) == pytest.approx(result.raw)
        _report("tour oracle agreement on 100 small instances")

    def test_cvrp_oracle_equivalence(self):
        """50 random instances with <= 5 customers: the built-in decider never
        beats the exhaustive optimum and its routes verify."""
        from evoset.core import CvrpPayload, ProblemInstance
        from evoset.instances import euclidean_matrix
        from evoset.problems import cvrp_baseline_from_payload

        rng = np.random.default_rng(17)
        decider = builtin("cvrp_nearest_feasible")
        for _ in range(50):
            n = int(rng.integers(2, 7))  # nodes incl. depot -> <= 5 customers
            coords = rng.uniform(0, 1, (n, 2))
            demands = tuple([0] + [int(d) for d in rng.integers(1, 11, n - 1)])
            capacity = float(rng.integers(10, 40))
            dist = euclidean_matrix(coords)
            payload = CvrpPayload(dist=dist, demands=demands, capacity=capacity, coords=coords)
            inst = ProblemInstance(
                id="x", task="cvrp", payload=payload,
                baseline=cvrp_baseline_from_payload(dist, demands, capacity),
            )
            result = eval_cvrp(decider, inst)
            assert result.violation is None
            assert result.raw >= cvrp_optimal_length(dist, demands, capacity) - 1e-9
            assert verify_trace(inst, result.trace) == pytest.approx(result.raw)
        _report("routing oracle agreement on 50 small instances")


@pytest.fixture(scope="module")
def mock_run(tmp_path_factory):
    """The pinned full-loop configuration, run twice into separate
    directories."""
    base = tmp_path_factory.mktemp("mockrun")
    spec = GeneratorSpec(task="obp", count=16, obp=ObpSpec(item_range=(30, 80)))
    instances = generate(spec, seed=42)
    config = EvolutionConfig(
        task="obp",
        population_size=5,
        eval_budget=50,
        seed=7,
        worker=WorkerSettings(pool_size=3, timeout_s=10.0),
    )
    start = time.perf_counter()
    run_experiment(config, instances, base / "a")
    run_experiment(config, instances, base / "b")
    elapsed = time.perf_counter() - start
    return base, elapsed


class TestFullLoop:
    def test_determinism_and_improvement(self, mock_run):
        """Mock-generator run (pop 5, budget 50, 16 small bin-packing
        instances, fixed seed) executed twice: byte-identical convergence
        files, final set score no worse than the initial best single mean,
        both runs inside 2 minutes, no network."""
        base, elapsed = mock_run
        a = (base / "a" / "convergence.csv").read_bytes()
        b = (base / "b" / "convergence.csv").read_bytes()
        assert a == b, "convergence files differ between identical runs"
        assert elapsed < 120.0, f"two runs took {elapsed:.1f}s"

        rows = a.decode().strip().splitlines()[1:]
        first = rows[0].split(",")
        last = rows[-1].split(",")
        initial_best_single = float(first[2])
        final_cpi = float(last[1])
        assert final_cpi <= initial_best_single + 1e-12
        _report(
            f"full-loop determinism (two runs in {elapsed:.1f}s; final CPI "
            f"{final_cpi:.5f} <= initial best mean {initial_best_single:.5f})"
        )

    def test_set_size_curve(self, mock_run):
        """Set-size sweep over the archived pool: non-increasing CPI, with the
        emitted series covering sizes 1..10."""
        base, _ = mock_run
        matrix = load_matrix(base / "a" / "matrix.csv")
        pool = matrix.valid_row_indices()
        assert len(pool) >= 10
        series = cpi_vs_setsize(matrix, pool, range(1, 11))
        values = [s["cpi"] for s in series]
        assert [s["size"] for s in series] == list(range(1, 11))
        assert all(x >= y - 1e-12 for x, y in zip(values, values[1:]))

        report = json.loads((base / "a" / "report.json").read_text())
        emitted = report["set_size_series"]
        assert [s["size"] for s in emitted] == list(range(1, 11))
        assert all(
            x["cpi"] >= y["cpi"] - 1e-12 for x, y in zip(emitted, emitted[1:])
        )
        _report("set-size curve non-increasing over sizes 1..10")


class TestCrossPathEquivalence:
    """Secondary-component criterion: the out-of-process worker matches the
    host built-ins and survives protocol abuse."""

    def test_shim_matches_host_builtins(self):
        spec = GeneratorSpec(task="obp", count=20, obp=ObpSpec(item_range=(80, 200)))
        instances = generate(spec, seed=314)
        with WorkerPool(size=2) as pool:
            for name in ("first_fit", "best_fit"):
                h = new_heuristic(
                    "obp", id=f"ref-{name}", thought="ref",
                    code=BUILTIN_SOURCE[name], origin="init",
                )
                via_worker = evaluate_on_set(h, instances, pool)
                in_process = PerformanceVector(
                    scores=tuple(eval_obp(builtin(name), inst).gap for inst in instances)
                )
                assert via_worker.valid
                assert via_worker.scores == in_process.scores, name
        _report("worker/host bin counts identical on 20 seeded instances (ff, bf)")

    def test_protocol_round_trip_and_recovery(self):
        import subprocess, sys

        proc = subprocess.Popen(
            [sys.executable, "-m", "evoset_worker"],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
        )

        def send(line):
            proc.stdin.write(line + "\n")
            proc.stdin.flush()
            return json.loads(proc.stdout.readline())

        try:
            assert send(json.dumps({"id": 1, "op": "ping"})) == {"id": 1, "ok": True}
            assert send(json.dumps({"id": 2, "op": "load", "code": BUILTIN_SOURCE["best_fit"]}))["ok"]
            reply = send(json.dumps({
                "id": 3, "op": "eval", "task": "obp",
                "payload": {"items": [6, 5, 4, 3], "capacity": 10},
            }))
            assert reply["ok"] and reply["raw"] == 2.0
            assert send("garbage that is not json")["error"] == "bad-frame"
            crash = "def priority(item, bins):\n    raise RuntimeError('crash')\n"
            assert send(json.dumps({"id": 4, "op": "load", "code": crash}))["ok"]
            reply = send(json.dumps({
                "id": 5, "op": "eval", "task": "obp",
                "payload": {"items": [5, 4], "capacity": 10},
            }))
            assert reply["ok"] is False and "crash" in reply["error"]
            assert send(json.dumps({"id": 6, "op": "ping"})) == {"id": 6, "ok": True}
        finally:
            proc.stdin.close()
            proc.wait(timeout=10)
        _report("protocol round-trip with bad-frame and crash recovery")

    def test_timeout_kill_within_grace(self):
        code = (
            "import numpy as np\n\n"
            "def priority(item: float, bins: np.ndarray) -> np.ndarray:\n"
            "    while True:\n        pass\n"
        )
        h = new_heuristic("obp", id="spin", thought="t", code=code, origin="init")
        spec = GeneratorSpec(task="obp", count=1, obp=ObpSpec(item_range=(10, 20)))
        inst = generate(spec, seed=1)[0]
        budget = 1.0
        with WorkerPool(size=1, timeout_s=budget) as pool:
            start = time.perf_counter()
            result = pool.episode(h, inst)
            elapsed = time.perf_counter() - start
        assert result.violation == "timeout"
        assert elapsed <= budget + 1.0, f"kill took {elapsed:.2f}s"
        _report(f"infinite-loop heuristic killed in {elapsed:.2f}s (budget {budget}s)")
