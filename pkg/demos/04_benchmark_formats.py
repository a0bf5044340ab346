"""Loading the three public benchmark formats.

Bin-packing lists are rescaled to capacity 100; tour and routing files have
their coordinates normalized to the unit square by the maximum spatial extent
(aspect ratio preserved), and the routing depot is reindexed to node 0. The
loaded instances drop straight into the evaluation harnesses and the bench
table.
"""

import tempfile
from pathlib import Path

from evoset.artifacts import bench
from evoset.instances import load_bpplib, load_cvrplib, load_tsplib
from evoset.problems import builtin_heuristic

BPP = "5\n150\n90\n75\n60\n45\n30\n"

TSP = """NAME : demo5
TYPE : TSP
DIMENSION : 5
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
1 0 0
2 0 40
3 30 40
4 30 0
5 15 20
EOF
"""

CVRP = """NAME : demo-route
TYPE : CVRP
DIMENSION : 4
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 12
NODE_COORD_SECTION
1 10 10
2 20 10
3 20 20
4 10 20
DEMAND_SECTION
1 5
2 7
3 0
4 6
DEPOT_SECTION
3
-1
EOF
"""


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "toy.bpp.txt").write_text(BPP)
        (tmp / "demo5.tsp").write_text(TSP)
        (tmp / "demo.vrp").write_text(CVRP)

        obp = load_bpplib(tmp / "toy.bpp.txt")
        print("bin packing:", obp.id)
        print("  capacity rescaled", obp.meta["original_capacity"], "-> 100")
        print("  items:", [round(s, 1) for s in obp.payload.items])
        print("  lower bound:", obp.baseline)

        tsp = load_tsplib(tmp / "demo5.tsp")
        print("\ntour file:", tsp.id)
        print("  normalized coords:\n", tsp.payload.coords)
        print("  2-opt baseline length:", round(tsp.baseline, 4))

        cvrp = load_cvrplib(tmp / "demo.vrp")
        print("\nrouting file:", cvrp.id)
        print("  depot id", cvrp.meta["depot_id"], "-> node 0; demands", cvrp.payload.demands)
        print("  capacity:", cvrp.payload.capacity, "baseline:", round(cvrp.baseline, 4))

        table = bench([builtin_heuristic("best_fit"), builtin_heuristic("first_fit")], [obp])
        print("\nbench table on the packing file (set best vs best single):")
        for row in table.rows:
            print(f"  {row.instance_id}: set {row.set_gap:.4f} | single {row.single_gap:.4f}")


if __name__ == "__main__":
    main()
