"""The three evaluation harnesses and their built-in baselines.

Each task drives a small decision function through a full episode: bin
priorities for online packing, next-node choices for tour and route
construction. Scores are relative gaps to an instance baseline — a threshold
lower bound for packing, a nearest-neighbor-plus-2-opt reference for tours and
routes. On tiny instances everything can be checked against brute force.
"""

import numpy as np

from evoset.instances import CvrpSpec, GeneratorSpec, ObpSpec, TspSpec, generate
from evoset.problems import (
    builtin,
    cvrp_optimal_length,
    eval_cvrp,
    eval_obp,
    eval_tsp,
    obp_optimal_bins,
    tsp_optimal_length,
)


def main():
    print("== online bin packing ==")
    spec = GeneratorSpec(task="obp", count=4, obp=ObpSpec(item_range=(200, 400)))
    for inst in generate(spec, seed=1):
        ff = eval_obp(builtin("first_fit"), inst)
        bf = eval_obp(builtin("best_fit"), inst)
        gen = inst.meta["generator"]
        print(
            f"  {inst.id} (shape {gen['shape']:.0f}, scale {gen['scale']:.0f}, "
            f"{gen['n_items']} items): bound {inst.baseline:.0f}, "
            f"first-fit {ff.raw:.0f} (gap {ff.gap:.3f}), best-fit {bf.raw:.0f} (gap {bf.gap:.3f})"
        )

    print("\n== tour construction ==")
    spec = GeneratorSpec(task="tsp", count=3, tsp=TspSpec(size_range=(7, 9)))
    for inst in generate(spec, seed=2):
        res = eval_tsp(builtin("tsp_nearest"), inst)
        opt = tsp_optimal_length(inst.payload.dist)
        print(
            f"  {inst.id} ({inst.payload.n_nodes} nodes): nearest {res.raw:.4f}, "
            f"2-opt baseline {inst.baseline:.4f}, brute force {opt:.4f}"
        )

    print("\n== capacitated routing ==")
    spec = GeneratorSpec(task="cvrp", count=3, cvrp=CvrpSpec(size_range=(5, 6)))
    for inst in generate(spec, seed=3):
        res = eval_cvrp(builtin("cvrp_nearest_feasible"), inst)
        opt = cvrp_optimal_length(
            inst.payload.dist, inst.payload.demands, inst.payload.capacity
        )
        print(
            f"  {inst.id} ({inst.payload.n_nodes - 1} customers, Q={inst.payload.capacity:.0f}): "
            f"nearest-feasible {res.raw:.4f} via {res.trace}, brute force {opt:.4f}"
        )

    print("\n== tiny packing instances vs exhaustive optimum ==")
    rng = np.random.default_rng(4)
    from evoset.core import ObpPayload, ProblemInstance
    from evoset.problems import obp_lower_bound_items

    for _ in range(3):
        items = rng.integers(20, 80, 7).astype(float)
        lb = obp_lower_bound_items(items, 100.0)
        inst = ProblemInstance(
            id="tiny", task="obp",
            payload=ObpPayload(items=tuple(items), capacity=100.0), baseline=lb,
        )
        ff = eval_obp(builtin("first_fit"), inst)
        print(
            f"  items {items.astype(int).tolist()}: bound {lb:.0f} <= "
            f"optimal {obp_optimal_bins(items, 100.0)} <= first-fit {ff.raw:.0f}"
        )


if __name__ == "__main__":
    main()
