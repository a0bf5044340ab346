"""Instance generation and benchmark loading.

Generators reproduce the training distributions: Weibull item sizes for bin
packing (shape drawn from {1,3,5}, scale from {5,10,20,40,80}, capacity 100),
clustered points for tours (3 or 10 clusters, sigma 0.03 or 0.07, centers in
[0.2,0.8]^2, cycled evenly), and uniform nodes with integer demands for
routing. Generation is a pure function of (spec, seed): every instance derives
its own rng from (seed, index), so output is order-independent.

Loaders parse the three public text formats (bin packing lists, node-coord
tour files, routing files with demand and depot sections), normalize
coordinates to the unit square by the maximum spatial extent, and rescale bin
capacity to 100.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CvrpPayload, ObpPayload, ProblemInstance, Task, TspPayload
from .problems import (
    cvrp_baseline_from_payload,
    obp_lower_bound_items,
    tsp_baseline_from_matrix,
)


class InstanceError(ValueError):
    pass


class ParseError(InstanceError):
    pass


def euclidean_matrix(coords: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances via hypot; elementwise and deterministic
    so the out-of-process worker can reproduce it bit-for-bit."""
    pts = np.asarray(coords, dtype=float)
    dx = pts[:, 0][:, None] - pts[:, 0][None, :]
    dy = pts[:, 1][:, None] - pts[:, 1][None, :]
    return np.hypot(dx, dy)


def normalize_coords(points: np.ndarray) -> np.ndarray:
    """Translate to the origin and divide both axes by max(x-extent, y-extent)
    so the result lies in [0,1]^2 with the aspect ratio preserved."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise InstanceError("need at least 2 points of shape (n, 2)")
    mins = pts.min(axis=0)
    extent = pts.max(axis=0) - mins
    scale = float(extent.max())
    if scale <= 0:
        raise InstanceError("degenerate instance: all points identical")
    return (pts - mins) / scale


@dataclass(frozen=True)
class ObpSpec:
    shapes: tuple[float, ...] = (1.0, 3.0, 5.0)
    scales: tuple[float, ...] = (5.0, 10.0, 20.0, 40.0, 80.0)
    item_range: tuple[int, int] = (200, 2000)
    capacity: float = 100.0


@dataclass(frozen=True)
class TspSpec:
    size_range: tuple[int, int] = (10, 200)
    mode: str = "clustered"  # or "uniform"
    cluster_counts: tuple[int, ...] = (3, 10)
    cluster_sigmas: tuple[float, ...] = (0.03, 0.07)


@dataclass(frozen=True)
class CvrpSpec:
    size_range: tuple[int, int] = (20, 200)  # node count, depot included
    capacity_range: tuple[int, int] = (10, 150)
    demand_range: tuple[int, int] = (1, 10)


@dataclass(frozen=True)
class GeneratorSpec:
    task: Task
    count: int
    obp: ObpSpec = field(default_factory=ObpSpec)
    tsp: TspSpec = field(default_factory=TspSpec)
    cvrp: CvrpSpec = field(default_factory=CvrpSpec)

    def __post_init__(self):
        if self.count < 1:
            raise InstanceError("count must be >= 1")
        for lo, hi in (self.obp.item_range, self.tsp.size_range, self.cvrp.size_range):
            if not (0 < lo <= hi):
                raise InstanceError("empty size range")
        if self.cvrp.capacity_range[1] < self.cvrp.demand_range[1]:
            raise InstanceError("capacity range cannot satisfy max demand")
        if self.obp.capacity <= 0:
            raise InstanceError("capacity must be positive")


# Training-set sizes mirroring the experimental setup; all overridable.
TRAINING_COUNTS = {"obp": 128, "tsp": 128, "cvrp": 256}


def training_spec(task: Task, count: int | None = None) -> GeneratorSpec:
    return GeneratorSpec(task=task, count=count if count is not None else TRAINING_COUNTS[task])


def _rng_for(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(index))))


def _gen_obp_one(spec: ObpSpec, rng: np.random.Generator, idx: int) -> ProblemInstance:
    shape = float(rng.choice(np.asarray(spec.shapes, dtype=float)))
    scale = float(rng.choice(np.asarray(spec.scales, dtype=float)))
    count = int(rng.integers(spec.item_range[0], spec.item_range[1] + 1))
    raw = scale * rng.weibull(shape, size=count)
    sizes = np.clip(np.rint(raw), 1.0, spec.capacity)
    payload = ObpPayload(items=tuple(float(s) for s in sizes), capacity=spec.capacity)
    baseline = obp_lower_bound_items(payload.items, payload.capacity)
    meta = {
        "source": "generated",
        "generator": {"shape": shape, "scale": scale, "n_items": count},
    }
    return ProblemInstance(
        id=f"obp-{idx:04d}", task="obp", payload=payload, baseline=baseline, meta=meta
    )


def _gen_tsp_one(spec: TspSpec, rng: np.random.Generator, idx: int) -> ProblemInstance:
    n = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
    configs = [(k, s) for k in spec.cluster_counts for s in spec.cluster_sigmas]
    if spec.mode == "clustered":
        k, sigma = configs[idx % len(configs)]
        centers = rng.uniform(0.2, 0.8, size=(k, 2))
        assignment = rng.integers(0, k, size=n)
        pts = np.clip(centers[assignment] + rng.normal(0.0, sigma, size=(n, 2)), 0.0, 1.0)
        gen_meta = {
            "mode": "clustered",
            "clusters": k,
            "sigma": sigma,
            "n_nodes": n,
            "centers": centers.tolist(),
        }
    elif spec.mode == "uniform":
        pts = rng.uniform(0.0, 1.0, size=(n, 2))
        gen_meta = {"mode": "uniform", "n_nodes": n}
    else:
        raise InstanceError(f"unknown tsp mode {spec.mode!r}")
    dist = euclidean_matrix(pts)
    payload = TspPayload(dist=dist, coords=pts)
    baseline = tsp_baseline_from_matrix(dist)
    return ProblemInstance(
        id=f"tsp-{idx:04d}",
        task="tsp",
        payload=payload,
        baseline=baseline,
        meta={"source": "generated", "generator": gen_meta},
    )


def _gen_cvrp_one(spec: CvrpSpec, rng: np.random.Generator, idx: int) -> ProblemInstance:
    n = int(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
    demands = np.concatenate(
        [[0], rng.integers(spec.demand_range[0], spec.demand_range[1] + 1, size=n - 1)]
    )
    max_demand = int(demands.max())
    # redraw the capacity rather than clamping demands when a draw comes in
    # under the largest demand
    while True:
        capacity = int(rng.integers(spec.capacity_range[0], spec.capacity_range[1] + 1))
        if capacity >= max_demand:
            break
    pts = rng.uniform(0.0, 1.0, size=(n, 2))
    dist = euclidean_matrix(pts)
    payload = CvrpPayload(
        dist=dist,
        demands=tuple(int(d) for d in demands),
        capacity=float(capacity),
        coords=pts,
    )
    baseline = cvrp_baseline_from_payload(dist, demands, float(capacity))
    meta = {"source": "generated", "generator": {"n_nodes": n, "capacity": capacity}}
    return ProblemInstance(
        id=f"cvrp-{idx:04d}", task="cvrp", payload=payload, baseline=baseline, meta=meta
    )


def generate(spec: GeneratorSpec, seed: int) -> list[ProblemInstance]:
    out = []
    for idx in range(spec.count):
        rng = _rng_for(seed, idx)
        if spec.task == "obp":
            out.append(_gen_obp_one(spec.obp, rng, idx))
        elif spec.task == "tsp":
            out.append(_gen_tsp_one(spec.tsp, rng, idx))
        else:
            out.append(_gen_cvrp_one(spec.cvrp, rng, idx))
    return out


def gen_obp(spec: GeneratorSpec, seed: int) -> list[ProblemInstance]:
    if spec.task != "obp":
        raise InstanceError("spec task is not obp")
    return generate(spec, seed)


def gen_tsp(spec: GeneratorSpec, seed: int) -> list[ProblemInstance]:
    if spec.task != "tsp":
        raise InstanceError("spec task is not tsp")
    return generate(spec, seed)


def gen_cvrp(spec: GeneratorSpec, seed: int) -> list[ProblemInstance]:
    if spec.task != "cvrp":
        raise InstanceError("spec task is not cvrp")
    return generate(spec, seed)


# ---------------------------------------------------------------------------
# Benchmark loaders
# ---------------------------------------------------------------------------

def load_bpplib(path) -> ProblemInstance:
    """Bin packing text format: item count, capacity, then one size per line.
    Capacity is rescaled to 100 with sizes scaled proportionally."""
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines()]
    rows = [(i + 1, ln) for i, ln in enumerate(lines) if ln]
    if len(rows) < 2:
        raise ParseError(f"{path.name}: expected at least a count and a capacity")
    try:
        n_items = int(rows[0][1])
    except ValueError:
        raise ParseError(f"{path.name} line {rows[0][0]}: bad item count {rows[0][1]!r}") from None
    try:
        capacity = float(rows[1][1])
    except ValueError:
        raise ParseError(f"{path.name} line {rows[1][0]}: bad capacity {rows[1][1]!r}") from None
    if len(rows) - 2 != n_items:
        raise ParseError(f"{path.name}: declared {n_items} items, found {len(rows) - 2}")
    sizes = []
    for lineno, text in rows[2:]:
        try:
            sizes.append(float(text))
        except ValueError:
            raise ParseError(f"{path.name} line {lineno}: bad item size {text!r}") from None
    factor = 100.0 / capacity
    scaled = tuple(s * factor for s in sizes)
    payload = ObpPayload(items=scaled, capacity=100.0)
    baseline = obp_lower_bound_items(scaled, 100.0)
    meta = {"source": "benchmark", "file": path.name, "original_capacity": capacity}
    return ProblemInstance(
        id=path.stem, task="obp", payload=payload, baseline=baseline, meta=meta
    )


def _tsplib_sections(path: Path) -> tuple[dict[str, str], dict[str, list[str]]]:
    header: dict[str, str] = {}
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line == "EOF":
            continue
        if ":" in line and current is None:
            key, _, value = line.partition(":")
            header[key.strip().upper()] = value.strip()
            continue
        upper = line.upper()
        if upper.endswith("_SECTION") or upper == "DEPOT_SECTION":
            current = upper
            sections[current] = []
            continue
        if current is None:
            raise ParseError(f"{path.name} line {lineno}: unexpected content {line!r}")
        sections[current].append(line)
    return header, sections


def _parse_coord_section(path: Path, rows: list[str]) -> tuple[list[int], np.ndarray]:
    ids = []
    pts = []
    for row in rows:
        parts = row.split()
        if len(parts) < 3:
            raise ParseError(f"{path.name}: bad coordinate row {row!r}")
        ids.append(int(parts[0]))
        pts.append((float(parts[1]), float(parts[2])))
    return ids, np.asarray(pts, dtype=float)


def load_tsplib(path) -> ProblemInstance:
    """Node-coordinate tour format (EUC_2D only); coordinates are normalized
    to the unit square before the distance matrix is built."""
    path = Path(path)
    header, sections = _tsplib_sections(path)
    weight_type = header.get("EDGE_WEIGHT_TYPE", "EUC_2D").upper()
    if weight_type != "EUC_2D":
        raise ParseError(f"{path.name}: unsupported edge weight type {weight_type}")
    if "NODE_COORD_SECTION" not in sections:
        raise ParseError(f"{path.name}: missing NODE_COORD_SECTION")
    _, pts = _parse_coord_section(path, sections["NODE_COORD_SECTION"])
    coords = normalize_coords(pts)
    dist = euclidean_matrix(coords)
    payload = TspPayload(dist=dist, coords=coords)
    baseline = tsp_baseline_from_matrix(dist)
    meta = {"source": "benchmark", "file": path.name}
    return ProblemInstance(
        id=path.stem, task="tsp", payload=payload, baseline=baseline, meta=meta
    )


def load_cvrplib(path) -> ProblemInstance:
    """Routing format with CAPACITY, NODE_COORD_SECTION, DEMAND_SECTION, and
    DEPOT_SECTION; the depot is reindexed to node 0."""
    path = Path(path)
    header, sections = _tsplib_sections(path)
    if "CAPACITY" not in header:
        raise ParseError(f"{path.name}: missing CAPACITY")
    capacity = float(header["CAPACITY"])
    for sec in ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION"):
        if sec not in sections:
            raise ParseError(f"{path.name}: missing {sec}")
    ids, pts = _parse_coord_section(path, sections["NODE_COORD_SECTION"])
    demand_by_id: dict[int, int] = {}
    for row in sections["DEMAND_SECTION"]:
        parts = row.split()
        if len(parts) < 2:
            raise ParseError(f"{path.name}: bad demand row {row!r}")
        demand_by_id[int(parts[0])] = int(float(parts[1]))
    depot_rows = [int(float(r.split()[0])) for r in sections["DEPOT_SECTION"]]
    depot_rows = [d for d in depot_rows if d != -1]
    if len(depot_rows) != 1:
        raise ParseError(f"{path.name}: expected exactly one depot, got {depot_rows}")
    depot_id = depot_rows[0]
    if depot_id not in ids:
        raise ParseError(f"{path.name}: depot {depot_id} not among nodes")
    order = [depot_id] + [i for i in ids if i != depot_id]
    index_of = {node_id: k for k, node_id in enumerate(ids)}
    coords = normalize_coords(pts[[index_of[i] for i in order]])
    demands = tuple(demand_by_id.get(i, 0) for i in order)
    dist = euclidean_matrix(coords)
    payload = CvrpPayload(dist=dist, demands=demands, capacity=capacity, coords=coords)
    baseline = cvrp_baseline_from_payload(dist, demands, capacity)
    meta = {"source": "benchmark", "file": path.name, "depot_id": depot_id}
    return ProblemInstance(
        id=path.stem, task="cvrp", payload=payload, baseline=baseline, meta=meta
    )


LOADERS = {"obp": load_bpplib, "tsp": load_tsplib, "cvrp": load_cvrplib}
