"""Flat-file persistence of runs and the experiment/bench orchestration.

An artifact directory is self-contained and diffable:
  config.json        exact configuration snapshot (no timestamps, no paths)
  heuristics.jsonl   one evaluated heuristic per line, archive order
  matrix.csv         rows = heuristics, cols = instances, gap values
  convergence.csv    evals_used, population_cpi, best_single_mean per point
  report.json        final CPI report, set-size series, contributor data
With repeats > 1 the per-run files carry a _<repeat> suffix. Re-running
``bench`` or ``report`` from an artifact needs no network and no generator.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    AblationFlags,
    CvrpPayload,
    EvolutionConfig,
    Heuristic,
    ObpPayload,
    PerformanceMatrix,
    PerformanceVector,
    ProblemInstance,
    TspPayload,
)
from .engine import RunState, cpi_vs_setsize, run
from .execution import Budget, PoolEvaluator, WorkerPool, execute
from .instances import euclidean_matrix
from .llm import make_generator
from .metrics import cpi


class ArtifactError(ValueError):
    pass


def variant_label(ablation: AblationFlags) -> str:
    parts = []
    if ablation.disable_cs:
        parts.append("w/o CS")
    if ablation.disable_ls:
        parts.append("w/o LS")
    if ablation.disable_cpm:
        parts.append("w/o CPM")
    return ", ".join(parts) if parts else "full"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Instance files (JSONL, one instance per line)
# ---------------------------------------------------------------------------

def instance_to_dict(inst: ProblemInstance) -> dict:
    payload = inst.payload
    if inst.task == "obp":
        body = {"items": list(payload.items), "capacity": payload.capacity}
    elif inst.task == "tsp":
        body = {"coords": payload.coords.tolist() if payload.coords is not None else None}
        if payload.coords is None:
            body["dist"] = payload.dist.tolist()
    else:
        body = {
            "coords": payload.coords.tolist() if payload.coords is not None else None,
            "demands": list(payload.demands),
            "capacity": payload.capacity,
            "depot": payload.depot,
        }
        if payload.coords is None:
            body["dist"] = payload.dist.tolist()
    return {
        "id": inst.id,
        "task": inst.task,
        "payload": body,
        "baseline": inst.baseline,
        "meta": inst.meta,
    }


def instance_from_dict(row: dict) -> ProblemInstance:
    task = row["task"]
    body = row["payload"]
    if task == "obp":
        payload = ObpPayload(items=tuple(body["items"]), capacity=body["capacity"])
    elif task == "tsp":
        coords = np.asarray(body["coords"], dtype=float) if body.get("coords") is not None else None
        dist = euclidean_matrix(coords) if coords is not None else np.asarray(body["dist"], dtype=float)
        payload = TspPayload(dist=dist, coords=coords)
    else:
        coords = np.asarray(body["coords"], dtype=float) if body.get("coords") is not None else None
        dist = euclidean_matrix(coords) if coords is not None else np.asarray(body["dist"], dtype=float)
        payload = CvrpPayload(
            dist=dist,
            demands=tuple(int(d) for d in body["demands"]),
            capacity=body["capacity"],
            depot=int(body.get("depot", 0)),
            coords=coords,
        )
    return ProblemInstance(
        id=row["id"], task=task, payload=payload, baseline=row["baseline"], meta=row.get("meta", {})
    )


def save_instances(path, instances: list[ProblemInstance]) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst), sort_keys=True) + "\n")


def load_instances(path) -> list[ProblemInstance]:
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(instance_from_dict(json.loads(line)))
        except (KeyError, ValueError) as exc:
            raise ArtifactError(f"{path.name} line {lineno}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# Matrix CSV
# ---------------------------------------------------------------------------

def save_matrix(path, matrix: PerformanceMatrix) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("heuristic_id," + ",".join(matrix.instance_ids) + "\n")
        for hid, row in zip(matrix.heuristic_ids, matrix.rows):
            cells = ",".join("inf" if math.isinf(s) else repr(s) for s in row.scores)
            fh.write(f"{hid},{cells}\n")


def load_matrix(path) -> PerformanceMatrix:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ArtifactError(f"{path.name}: empty matrix file")
    header = lines[0].split(",")
    if header[0] != "heuristic_id":
        raise ArtifactError(f"{path.name}: bad header")
    instance_ids = tuple(header[1:])
    ids = []
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        ids.append(parts[0])
        scores = tuple(float(x) for x in parts[1:])
        valid = all(math.isfinite(s) for s in scores)
        rows.append(PerformanceVector(scores=scores, valid=valid))
    return PerformanceMatrix(tuple(ids), tuple(rows), instance_ids)


# ---------------------------------------------------------------------------
# Heuristic archive (JSONL)
# ---------------------------------------------------------------------------

def _heuristic_to_dict(h: Heuristic, vector: PerformanceVector) -> dict:
    return {
        "id": h.id,
        "thought": h.thought,
        "code": h.code,
        "origin": h.origin,
        "parents": list(h.parent_ids),
        "dedupe_key": h.dedupe_key,
        "valid": vector.valid,
        "scores": list(vector.scores) if vector.valid else None,
    }


def load_heuristics(path) -> list[Heuristic]:
    path = Path(path)
    out = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        out.append(
            Heuristic(
                id=row["id"],
                thought=row["thought"],
                code=row["code"],
                origin=row["origin"],
                parent_ids=tuple(row["parents"]),
                dedupe_key=row.get("dedupe_key", ""),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Run artifact
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunArtifact:
    directory: Path
    config: dict
    final_population_ids: tuple[str, ...]
    report: dict


def config_snapshot(config: EvolutionConfig, repeats: int, instance_count: int) -> dict:
    snap = dataclasses.asdict(config)
    snap["variant"] = variant_label(config.ablation)
    snap["repeats"] = repeats
    snap["instance_count"] = instance_count
    return snap


def build_report(state: RunState, max_series_size: int = 10) -> dict:
    matrix = state.matrix
    pop_rows = [matrix.row_index(h.id) for h in state.population.members]
    final = cpi(matrix, pop_rows)
    pool = matrix.valid_row_indices()
    sizes = range(1, min(max_series_size, len(pool)) + 1)
    series = cpi_vs_setsize(matrix, pool, sizes)
    counts: dict[str, int] = {}
    for hid in final.contributor:
        counts[hid] = counts.get(hid, 0) + 1
    best_single = min(float(matrix.scores[r].mean()) for r in pop_rows)
    return {
        "final_population": [h.id for h in state.population.members],
        "population_cpi": final.cpi,
        "best_single_mean": best_single,
        "best_per_instance": list(final.best_per_instance),
        "contributors": list(final.contributor),
        "contributor_counts": counts,
        "set_size_series": series,
        "evals_used": state.evals_used,
        "generations": state.generation,
    }


def save_run(
    out_dir,
    config: EvolutionConfig,
    state: RunState,
    repeats: int,
    suffix: str = "",
) -> RunArtifact:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snap = config_snapshot(config, repeats, len(state.matrix.instance_ids))
    _write_json(out / "config.json", snap)

    with (out / f"heuristics{suffix}.jsonl").open("w") as fh:
        for hid, row in zip(state.matrix.heuristic_ids, state.matrix.rows):
            fh.write(json.dumps(_heuristic_to_dict(state.heuristics[hid], row), sort_keys=True) + "\n")

    save_matrix(out / f"matrix{suffix}.csv", state.matrix)

    with (out / f"convergence{suffix}.csv").open("w") as fh:
        fh.write("evals_used,population_cpi,best_single_mean\n")
        for point in state.convergence:
            fh.write(f"{point.evals_used},{point.population_cpi!r},{point.best_single_mean!r}\n")

    report = build_report(state)
    report["variant"] = snap["variant"]
    _write_json(out / f"report{suffix}.json", report)
    return RunArtifact(
        directory=out,
        config=snap,
        final_population_ids=tuple(report["final_population"]),
        report=report,
    )


def run_experiment(
    config: EvolutionConfig,
    instances: list[ProblemInstance],
    out_dir,
    repeats: int = 1,
    worker_cmd: list[str] | None = None,
) -> list[RunArtifact]:
    """Run the loop once per repeat with derived seeds (seed + repeat index)
    and write one artifact set per repeat."""
    if not instances:
        raise ArtifactError("no instances to evaluate on")
    if any(inst.task != config.task for inst in instances):
        raise ArtifactError("instance task does not match config task")
    artifacts = []
    generator = make_generator(config.llm)
    for repeat in range(repeats):
        seed = config.seed + repeat
        run_config = dataclasses.replace(config, seed=seed)
        with WorkerPool.from_settings(config.worker, worker_cmd=worker_cmd) as pool:
            evaluator = PoolEvaluator(instances=instances, pool=pool)
            state = run(run_config, generator, evaluator)
        suffix = "" if repeats == 1 else f"_{repeat}"
        artifacts.append(save_run(out_dir, run_config, state, repeats, suffix=suffix))
    return artifacts


# ---------------------------------------------------------------------------
# Benchmark evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    instance_id: str
    set_gap: float
    single_gap: float


@dataclass(frozen=True)
class BenchTable:
    rows: tuple[BenchRow, ...]
    set_mean: float
    single_mean: float
    best_single_id: str
    warnings: tuple[str, ...] = ()


def bench(
    heuristics: list[Heuristic],
    instances: list[ProblemInstance],
    pool: WorkerPool | None = None,
    timeout_s: float = 10.0,
    warnings: tuple[str, ...] = (),
) -> BenchTable:
    """Evaluate every heuristic on every instance; per instance report the
    set's best gap next to the best-single-heuristic gap (best single = lowest
    mean gap across the benchmark set, failures counted as +inf)."""
    if not heuristics:
        raise ArtifactError("empty heuristic set")
    if not instances:
        return BenchTable(rows=(), set_mean=math.nan, single_mean=math.nan,
                          best_single_id="", warnings=warnings)
    budget = Budget(timeout_s=timeout_s)
    gaps = np.full((len(heuristics), len(instances)), math.inf)
    for i, h in enumerate(heuristics):
        for j, inst in enumerate(instances):
            episode = execute(h, inst, budget=budget, pool=pool)
            if episode.violation is None:
                gaps[i, j] = episode.gap
    means = gaps.mean(axis=1)
    best_single = int(np.argmin(means))
    rows = tuple(
        BenchRow(
            instance_id=inst.id,
            set_gap=float(gaps[:, j].min()),
            single_gap=float(gaps[best_single, j]),
        )
        for j, inst in enumerate(instances)
    )
    return BenchTable(
        rows=rows,
        set_mean=float(np.mean([r.set_gap for r in rows])),
        single_mean=float(np.mean([r.single_gap for r in rows])),
        best_single_id=heuristics[best_single].id,
        warnings=warnings,
    )


def bench_table_to_dict(table: BenchTable) -> dict:
    return {
        "rows": [
            {"instance": r.instance_id, "set_gap": r.set_gap, "single_gap": r.single_gap}
            for r in table.rows
        ],
        "set_mean": table.set_mean,
        "single_mean": table.single_mean,
        "best_single_id": table.best_single_id,
        "warnings": list(table.warnings),
    }
