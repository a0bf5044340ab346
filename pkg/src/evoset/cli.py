"""Command-line surface.

Subcommands: ``gen`` (instance files), ``run`` (experiment), ``bench``
(benchmark tables from an artifact), ``select`` (standalone greedy selection
over a matrix file), ``verify`` (property battery for the set-score
mathematics), and ``report`` (re-emit series from an artifact).

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 verification
failure. The API key for live generation comes from the environment only
(variable named in the config, EVOSET_API_KEY by default); everything else is
flags or the config file.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from .artifacts import (
    ArtifactError,
    bench,
    bench_table_to_dict,
    load_heuristics,
    load_instances,
    load_matrix,
    run_experiment,
    save_instances,
)
from .core import (
    AblationFlags,
    CoreError,
    EvolutionConfig,
    LlmSettings,
    PerformanceMatrix,
    PerformanceVector,
    WorkerSettings,
)
from .engine import EngineError, cpi_vs_setsize
from .execution import ExecutionError, WorkerPool
from .instances import (
    InstanceError,
    LOADERS,
    generate,
    training_spec,
)
from .metrics import MetricsError, cpi, delta_cpi
from .selection import SelectionError, cpm_select, verify_greedy_bound

_CONFIG_ERRORS = (CoreError, InstanceError, ArtifactError, click.UsageError, FileNotFoundError)
_RUNTIME_ERRORS = (EngineError, ExecutionError, SelectionError, MetricsError, OSError, ValueError)


class VerificationFailure(RuntimeError):
    pass


@click.group()
def cli():
    """Evolve and evaluate complementary heuristic sets."""


@cli.command("gen")
@click.option("--task", type=click.Choice(["obp", "tsp", "cvrp"]), required=True)
@click.option("--count", type=int, default=None, help="instances to generate (task default if omitted)")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--mode", type=click.Choice(["clustered", "uniform"]), default=None,
              help="tsp point layout (default clustered)")
@click.option("--size-min", type=int, default=None, help="min items/nodes per instance")
@click.option("--size-max", type=int, default=None, help="max items/nodes per instance")
def gen_cmd(task, count, seed, out, mode, size_min, size_max):
    """Generate seeded training instances and write them as JSONL."""
    spec = training_spec(task, count)
    if task == "tsp" and (mode or size_min or size_max):
        tsp = spec.tsp
        tsp = dataclasses.replace(
            tsp,
            mode=mode or tsp.mode,
            size_range=(size_min or tsp.size_range[0], size_max or tsp.size_range[1]),
        )
        spec = dataclasses.replace(spec, tsp=tsp)
    elif task == "obp" and (size_min or size_max):
        obp = spec.obp
        obp = dataclasses.replace(
            obp, item_range=(size_min or obp.item_range[0], size_max or obp.item_range[1])
        )
        spec = dataclasses.replace(spec, obp=obp)
    elif task == "cvrp" and (size_min or size_max):
        cvrp = spec.cvrp
        cvrp = dataclasses.replace(
            cvrp, size_range=(size_min or cvrp.size_range[0], size_max or cvrp.size_range[1])
        )
        spec = dataclasses.replace(spec, cvrp=cvrp)
    instances = generate(spec, seed)
    save_instances(out, instances)
    click.echo(f"wrote {len(instances)} {task} instances to {out}")


def _config_from_file(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


@cli.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--task", type=click.Choice(["obp", "tsp", "cvrp"]), default=None)
@click.option("--instances", "instances_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--pop-size", type=int, default=None)
@click.option("--budget", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--repeats", type=int, default=None)
@click.option("--mock-llm", is_flag=True, default=False)
@click.option("--endpoint", type=str, default=None, help="OpenAI-compatible base URL")
@click.option("--model", type=str, default=None)
@click.option("--operator-mix", type=float, default=None)
@click.option("--no-cs", is_flag=True, default=False)
@click.option("--no-ls", is_flag=True, default=False)
@click.option("--no-cpm", is_flag=True, default=False)
@click.option("--timeout", type=float, default=None, help="per-instance worker timeout (s)")
@click.option("--workers", type=int, default=None, help="worker pool size")
def run_cmd(config_path, task, instances_path, out, pop_size, budget, seed, repeats,
            mock_llm, endpoint, model, operator_mix, no_cs, no_ls, no_cpm, timeout, workers):
    """Run the evolutionary loop and write an artifact directory."""
    file_cfg = _config_from_file(config_path)

    def pick(flag, key, default):
        if flag is not None:
            return flag
        return file_cfg.get(key, default)

    task = pick(task, "task", None)
    instances_path = pick(instances_path, "instances", None)
    out = pick(out, "out", None)
    if not task or not instances_path or not out:
        raise click.UsageError("--task, --instances, and --out are required (flags or config file)")

    ablation = AblationFlags(
        disable_cs=no_cs or file_cfg.get("disable_cs", False),
        disable_ls=no_ls or file_cfg.get("disable_ls", False),
        disable_cpm=no_cpm or file_cfg.get("disable_cpm", False),
    )
    llm = LlmSettings(
        mock=mock_llm or file_cfg.get("mock_llm", not (endpoint or file_cfg.get("endpoint"))),
        base_url=endpoint or file_cfg.get("endpoint", ""),
        model=model or file_cfg.get("model", ""),
    )
    worker = WorkerSettings(
        timeout_s=pick(timeout, "timeout", 10.0),
        pool_size=int(pick(workers, "workers", 2)),
    )
    config = EvolutionConfig(
        task=task,
        population_size=int(pick(pop_size, "pop_size", 10)),
        eval_budget=int(pick(budget, "budget", 2000)),
        seed=int(pick(seed, "seed", 0)),
        operator_mix=float(pick(operator_mix, "operator_mix", 0.5)),
        ablation=ablation,
        llm=llm,
        worker=worker,
    )
    instances = load_instances(instances_path)
    n_repeats = int(pick(repeats, "repeats", 1))
    artifacts = run_experiment(config, instances, out, repeats=n_repeats)
    for artifact in artifacts:
        click.echo(
            f"run seed={artifact.config['seed']}: final CPI "
            f"{artifact.report['population_cpi']:.6f} -> {artifact.directory}"
        )


@cli.command("bench")
@click.option("--archive", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--benchmark-dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--task", type=click.Choice(["obp", "tsp", "cvrp"]), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--timeout", type=float, default=10.0)
@click.option("--workers", type=int, default=2)
def bench_cmd(archive, benchmark_dir, task, out, timeout, workers):
    """Evaluate an artifact's final population on a directory of benchmark
    files; reports set-best and best-single gaps per instance."""
    archive = Path(archive)
    report = json.loads((archive / "report.json").read_text())
    by_id = {h.id: h for h in load_heuristics(archive / "heuristics.jsonl")}
    population = [by_id[hid] for hid in report["final_population"]]

    loader = LOADERS[task]
    instances = []
    warnings = []
    for path in sorted(Path(benchmark_dir).iterdir()):
        if not path.is_file():
            continue
        try:
            instances.append(loader(path))
        except (InstanceError, ValueError) as exc:
            warnings.append(f"{path.name}: {exc}")
    if not instances:
        click.echo("no benchmark instances loaded", err=True)
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)

    needs_pool = any(h.origin != "builtin" for h in population)
    pool = WorkerPool(size=workers, timeout_s=timeout) if needs_pool and instances else None
    try:
        table = bench(population, instances, pool=pool, timeout_s=timeout,
                      warnings=tuple(warnings))
    finally:
        if pool is not None:
            pool.close()
    for row in table.rows:
        click.echo(f"{row.instance_id}\tset={row.set_gap:.4f}\tsingle={row.single_gap:.4f}")
    if table.rows:
        click.echo(f"mean\tset={table.set_mean:.4f}\tsingle={table.single_mean:.4f}")
    if out:
        Path(out).write_text(json.dumps(bench_table_to_dict(table), indent=2, sort_keys=True) + "\n")


@cli.command("select")
@click.option("--matrix", "matrix_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--n", type=int, required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def select_cmd(matrix_path, n, out):
    """Standalone greedy selection over a stored matrix."""
    matrix = load_matrix(matrix_path)
    outcome = cpm_select(matrix, matrix.valid_row_indices(), n)
    chosen_ids = [matrix.heuristic_ids[i] for i in outcome.chosen]
    for hid, value in zip(chosen_ids, outcome.cpi_trace):
        click.echo(f"{hid}\tcpi={value:.6f}")
    if out:
        payload = {"chosen": chosen_ids, "cpi_trace": list(outcome.cpi_trace)}
        Path(out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@cli.command("verify")
@click.option("--trials-monotone", type=int, default=1000, show_default=True)
@click.option("--trials-bound", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0)
def verify_cmd(trials_monotone, trials_bound, seed):
    """Property battery: monotonicity/supermodularity of the set score, the
    greedy guarantee against exhaustive enumeration, and the gain-link between
    the selection increment and the set score."""
    rng = np.random.default_rng(seed)
    failures = 0

    mono_bad = super_bad = link_bad = 0
    for _ in range(trials_monotone):
        rows = int(rng.integers(2, 9))
        m = int(rng.integers(2, 13))
        scores = rng.uniform(0.0, 1.0, size=(rows, m))
        matrix = PerformanceMatrix(
            tuple(f"h{i}" for i in range(rows)),
            tuple(PerformanceVector(scores=tuple(r)) for r in scores),
            tuple(f"i{j}" for j in range(m)),
        )
        perm = list(rng.permutation(rows))
        u_size = int(rng.integers(1, rows))
        v_size = int(rng.integers(u_size, rows))
        u, v = perm[:u_size], perm[:v_size]
        extension = perm[-1]  # outside V since v_size < rows
        f_u, f_v = cpi(matrix, u).cpi, cpi(matrix, v).cpi
        if not (f_u >= f_v - 1e-12):
            mono_bad += 1
        gain_u = f_u - cpi(matrix, u + [extension]).cpi
        gain_v = f_v - cpi(matrix, v + [extension]).cpi
        if not (gain_u >= gain_v - 1e-12):
            super_bad += 1
        delta = delta_cpi(matrix.rows[extension], cpi(matrix, v).best_per_instance)
        if abs(delta - m * gain_v) > 1e-12:
            link_bad += 1
    click.echo(f"monotonicity: {trials_monotone - mono_bad}/{trials_monotone} ok")
    click.echo(f"supermodularity: {trials_monotone - super_bad}/{trials_monotone} ok")
    click.echo(f"gain link: {trials_monotone - link_bad}/{trials_monotone} ok")
    failures += mono_bad + super_bad + link_bad

    bound_bad = 0
    greedy_optimal = 0
    for _ in range(trials_bound):
        scores = rng.uniform(0.0, 1.0, size=(8, 10))
        matrix = PerformanceMatrix(
            tuple(f"h{i}" for i in range(8)),
            tuple(PerformanceVector(scores=tuple(r)) for r in scores),
            tuple(f"i{j}" for j in range(10)),
        )
        report = verify_greedy_bound(matrix, range(8), k=4)
        if not report.bound_ok:
            bound_bad += 1
        if abs(report.greedy_cpi - report.optimal_cpi) <= 1e-12:
            greedy_optimal += 1
    click.echo(f"greedy bound: {trials_bound - bound_bad}/{trials_bound} ok")
    click.echo(f"greedy == exhaustive optimum in {greedy_optimal}/{trials_bound} trials")
    failures += bound_bad

    if failures:
        raise VerificationFailure(f"{failures} property violations")
    click.echo("all properties hold")


@cli.command("report")
@click.option("--archive", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--max-size", type=int, default=10, show_default=True)
def report_cmd(archive, max_size):
    """Re-emit the report series from a stored artifact (no network, no
    generator)."""
    archive = Path(archive)
    matrix = load_matrix(archive / "matrix.csv")
    report = json.loads((archive / "report.json").read_text())
    pop_rows = [matrix.row_index(hid) for hid in report["final_population"]]
    final = cpi(matrix, pop_rows)
    pool = matrix.valid_row_indices()
    sizes = range(1, min(max_size, len(pool)) + 1)
    series = cpi_vs_setsize(matrix, pool, sizes)
    report["population_cpi"] = final.cpi
    report["best_per_instance"] = list(final.best_per_instance)
    report["contributors"] = list(final.contributor)
    report["set_size_series"] = series
    (archive / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for entry in series:
        click.echo(f"size {entry['size']}: cpi {entry['cpi']:.6f}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"config error: {exc.format_message()}", err=True)
        return 1
    except _CONFIG_ERRORS as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except VerificationFailure as exc:
        click.echo(f"verification failure: {exc}", err=True)
        return 3
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 2
    except _RUNTIME_ERRORS as exc:
        click.echo(f"runtime error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
