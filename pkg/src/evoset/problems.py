"""Task semantics for the three problems.

Rollout evaluators drive a decision function through a full episode (bin
choices for each arriving item, next-node choices for tour/route
construction), emit the solution trace, and score it as a relative gap to the
instance baseline. Independent trace verifiers re-check feasibility and
recompute the raw score so nothing downstream has to trust an evaluator or an
out-of-process worker. Small-instance brute-force oracles live here too.

Conventions pinned across the in-process evaluators and the out-of-process
worker (drift between them is a test failure):
  - bins are "open" only; a new bin opens exactly when no open bin fits;
  - priority argmax is restricted to feasible bins and breaks ties toward the
    lowest bin index;
  - tours start at node 0 and the destination parameter is the start node;
  - routes start at the depot; a decider returning the depot id (or -1, the
    template's no-feasible-node sentinel) triggers a return to the depot; an
    infeasible customer pick is routed via the depot and recorded, not failed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .core import CvrpPayload, Heuristic, ObpPayload, ProblemInstance, Task, TspPayload

_EPS = 1e-9


class ProblemError(ValueError):
    pass


class TraceError(ValueError):
    """A solution trace failed independent feasibility verification."""


@dataclass(frozen=True)
class DecisionQuery:
    """One step's view of the episode, matching the decision-function
    signature of the task."""

    task: Task
    # obp
    item: float | None = None
    bins: np.ndarray | None = None  # remaining capacities of the open bins
    # tsp / cvrp
    current: int | None = None
    destination: int | None = None  # tsp: the return target (start node)
    depot: int | None = None
    unvisited: tuple[int, ...] | None = None
    rest_capacity: float | None = None
    demands: tuple[int, ...] | None = None
    distances: np.ndarray | None = None


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of one heuristic on one instance. ``violation`` unset means the
    trace passed feasibility; scores are +inf when it is set."""

    raw: float
    gap: float
    decisions: int
    trace: tuple[int, ...]
    violation: str | None = None
    detours: int = 0


def _invalid(decisions: int, violation: str, trace: tuple[int, ...] = ()) -> EpisodeResult:
    return EpisodeResult(
        raw=math.inf, gap=math.inf, decisions=decisions, trace=trace, violation=violation
    )


def query_decider(decider, query: DecisionQuery):
    """Call a template-signature decision function with the query's fields."""
    if query.task == "obp":
        return decider(query.item, np.asarray(query.bins, dtype=float))
    if query.task == "tsp":
        return decider(
            query.current,
            query.destination,
            np.asarray(query.unvisited, dtype=int),
            query.distances,
        )
    return decider(
        query.current,
        query.depot,
        np.asarray(query.unvisited, dtype=int),
        query.rest_capacity,
        np.asarray(query.demands, dtype=int),
        query.distances,
    )


def _as_node(value) -> int | None:
    if isinstance(value, (bool, np.bool_)):
        return None
    if isinstance(value, (int, np.integer)):
        return int(value)
    return None


# ---------------------------------------------------------------------------
# Online bin packing
# ---------------------------------------------------------------------------

def eval_obp(decider, instance: ProblemInstance) -> EpisodeResult:
    """Process items in order; each goes to the feasible open bin with maximum
    priority (ties toward the lowest bin index), or into a fresh bin when
    nothing fits."""
    if instance.task != "obp":
        raise ProblemError(f"expected an obp instance, got {instance.task}")
    payload: ObpPayload = instance.payload
    capacity = payload.capacity
    # growing buffer of open-bin remainders (episodes can open thousands)
    buf = np.empty(16, dtype=float)
    n_bins = 0
    trace: list[int] = []
    decisions = 0
    for item in payload.items:
        rest = buf[:n_bins]
        feasible = rest >= item
        if not feasible.any():
            if n_bins == len(buf):
                buf = np.concatenate([buf, np.empty_like(buf)])
            buf[n_bins] = capacity - item
            n_bins += 1
            trace.append(n_bins - 1)
            continue
        query = DecisionQuery(task="obp", item=item, bins=rest.copy())
        try:
            priorities = np.asarray(query_decider(decider, query), dtype=float)
        except Exception as exc:  # decider is arbitrary code
            return _invalid(decisions, f"decider-error: {exc}", tuple(trace))
        decisions += 1
        if priorities.shape != (n_bins,):
            return _invalid(decisions, "bad-priority-shape", tuple(trace))
        if np.isnan(priorities[feasible]).any():
            return _invalid(decisions, "non-finite-priority", tuple(trace))
        # mask infeasible bins so the chosen index is the true bin index
        masked = np.where(feasible, priorities, -math.inf)
        choice = int(np.argmax(masked))
        buf[choice] -= item
        trace.append(choice)
    raw = float(n_bins)
    gap = (raw - instance.baseline) / instance.baseline
    return EpisodeResult(raw=raw, gap=gap, decisions=decisions, trace=tuple(trace))


def verify_obp_trace(instance: ProblemInstance, trace) -> float:
    """Check a bin-assignment trace (bin index per item, bins numbered in
    opening order) and return the bin count."""
    payload: ObpPayload = instance.payload
    if len(trace) != len(payload.items):
        raise TraceError(f"trace length {len(trace)} != {len(payload.items)} items")
    loads: list[float] = []
    for item, t in zip(payload.items, trace):
        b = _as_node(t)
        if b is None or b < 0 or b > len(loads):
            raise TraceError(f"bad bin index {t!r}")
        if b == len(loads):
            loads.append(0.0)
        loads[b] += item
        if loads[b] > payload.capacity + _EPS:
            raise TraceError(f"bin {b} overfilled: {loads[b]} > {payload.capacity}")
    return float(len(loads))


def _ceil(x: float) -> int:
    return math.ceil(x - _EPS)


def obp_lower_bound_items(items, capacity: float) -> float:
    """max(L1, L2): the size-sum bound and the threshold bound maximized over
    candidate thresholds taken from the distinct item sizes at or below half
    capacity (plus zero)."""
    sizes = np.asarray(items, dtype=float)
    if sizes.size == 0:
        return 0.0
    c = float(capacity)
    l1 = _ceil(sizes.sum() / c)
    best = l1
    alphas = {0.0} | {float(s) for s in sizes if s <= c / 2}
    for alpha in alphas:
        j1 = sizes > c - alpha
        j2 = (~j1) & (sizes > c / 2)
        j3 = (sizes <= c / 2) & (sizes >= alpha)
        n2 = int(j2.sum())
        s2 = float(sizes[j2].sum())
        s3 = float(sizes[j3].sum())
        extra = max(0, _ceil((s3 - (n2 * c - s2)) / c))
        best = max(best, int(j1.sum()) + n2 + extra)
    return float(best)


def obp_lower_bound(instance: ProblemInstance) -> float:
    payload: ObpPayload = instance.payload
    return obp_lower_bound_items(payload.items, payload.capacity)


def obp_optimal_bins(items, capacity: float) -> int:
    """Exhaustive optimal bin count via branch and bound; small inputs only."""
    sizes = sorted((float(s) for s in items), reverse=True)
    if len(sizes) > 12:
        raise ProblemError("exhaustive packing limited to 12 items")
    best = len(sizes)
    loads: list[float] = []

    def place(k: int) -> None:
        nonlocal best
        if len(loads) >= best:
            return
        if k == len(sizes):
            best = len(loads)
            return
        s = sizes[k]
        tried: set[float] = set()
        for i in range(len(loads)):
            if loads[i] + s <= capacity + _EPS and loads[i] not in tried:
                tried.add(loads[i])
                loads[i] += s
                place(k + 1)
                loads[i] -= s
        loads.append(s)
        place(k + 1)
        loads.pop()

    place(0)
    return best


# ---------------------------------------------------------------------------
# Traveling salesman
# ---------------------------------------------------------------------------

def eval_tsp(decider, instance: ProblemInstance) -> EpisodeResult:
    """Build a tour from node 0 by repeated next-node queries; the destination
    parameter is bound to the start node (the return target)."""
    if instance.task != "tsp":
        raise ProblemError(f"expected a tsp instance, got {instance.task}")
    payload: TspPayload = instance.payload
    n = payload.n_nodes
    if n < 2:
        raise ProblemError("tsp instance needs at least 2 nodes")
    unvisited = list(range(1, n))
    current = 0
    trace = [0]
    decisions = 0
    while unvisited:
        query = DecisionQuery(
            task="tsp",
            current=current,
            destination=0,
            unvisited=tuple(unvisited),
            distances=payload.dist,
        )
        try:
            reply = query_decider(decider, query)
        except Exception as exc:
            return _invalid(decisions, f"decider-error: {exc}", tuple(trace))
        decisions += 1
        nxt = _as_node(reply)
        if nxt is None or nxt not in unvisited:
            return _invalid(decisions, f"invalid-node: {reply!r}", tuple(trace))
        unvisited.remove(nxt)
        trace.append(nxt)
        current = nxt
    raw = verify_tsp_trace(instance, trace)
    gap = (raw - instance.baseline) / instance.baseline
    return EpisodeResult(raw=raw, gap=gap, decisions=decisions, trace=tuple(trace))


def verify_tsp_trace(instance: ProblemInstance, trace) -> float:
    """Check the visit order is a Hamiltonian cycle from node 0 and return the
    cycle length."""
    payload: TspPayload = instance.payload
    n = payload.n_nodes
    nodes = [_as_node(t) for t in trace]
    if len(nodes) != n or any(v is None for v in nodes):
        raise TraceError("trace is not a permutation of the nodes")
    if nodes[0] != 0:
        raise TraceError("tour must start at node 0")
    if sorted(nodes) != list(range(n)):
        raise TraceError("trace is not a permutation of the nodes")
    order = np.asarray(nodes, dtype=int)
    legs = payload.dist[order[:-1], order[1:]]
    return float(legs.sum() + payload.dist[order[-1], order[0]])


def tsp_optimal_length(dist: np.ndarray) -> float:
    """Exhaustive optimum over all tours; n <= 9."""
    n = dist.shape[0]
    if n > 9:
        raise ProblemError("exhaustive tour search limited to 9 nodes")
    if n == 2:
        return float(2.0 * dist[0, 1])
    perms = np.array(list(permutations(range(1, n))), dtype=int)
    inner = dist[perms[:, :-1], perms[:, 1:]].sum(axis=1)
    totals = dist[0, perms[:, 0]] + inner + dist[perms[:, -1], 0]
    return float(totals.min())


# ---------------------------------------------------------------------------
# Capacitated vehicle routing
# ---------------------------------------------------------------------------

def eval_cvrp(decider, instance: ProblemInstance) -> EpisodeResult:
    """Serve all customers from the depot under the capacity constraint.

    The decider may return an unvisited customer (visited directly when its
    demand fits, otherwise via a depot detour that is recorded, not failed) or
    the depot id / -1 to reset capacity. Returning the depot while already
    there is a violation; so is any visited or out-of-range node.
    """
    if instance.task != "cvrp":
        raise ProblemError(f"expected a cvrp instance, got {instance.task}")
    payload: CvrpPayload = instance.payload
    n = payload.n_nodes
    demands = np.asarray(payload.demands, dtype=int)
    capacity = payload.capacity
    unvisited = list(range(1, n))
    current = 0
    rest = float(capacity)
    trace = [0]
    decisions = 0
    detours = 0
    while unvisited:
        query = DecisionQuery(
            task="cvrp",
            current=current,
            depot=0,
            unvisited=tuple(unvisited),
            rest_capacity=rest,
            demands=tuple(payload.demands),
            distances=payload.dist,
        )
        try:
            reply = query_decider(decider, query)
        except Exception as exc:
            return _invalid(decisions, f"decider-error: {exc}", tuple(trace))
        decisions += 1
        nxt = _as_node(reply)
        if nxt is not None and (nxt == 0 or nxt == -1):
            if current == 0:
                return _invalid(decisions, "depot-loop", tuple(trace))
            trace.append(0)
            current = 0
            rest = float(capacity)
            continue
        if nxt is None or nxt not in unvisited:
            return _invalid(decisions, f"invalid-node: {reply!r}", tuple(trace))
        if demands[nxt] > rest:
            trace.append(0)
            rest = float(capacity)
            detours += 1
        trace.append(nxt)
        rest -= float(demands[nxt])
        unvisited.remove(nxt)
        current = nxt
    if current != 0:
        trace.append(0)
    raw = verify_cvrp_trace(instance, trace)
    gap = (raw - instance.baseline) / instance.baseline
    return EpisodeResult(
        raw=raw, gap=gap, decisions=decisions, trace=tuple(trace), detours=detours
    )


def verify_cvrp_trace(instance: ProblemInstance, trace) -> float:
    """Check a depot-delimited route sequence serves every customer exactly
    once within capacity and return the total distance."""
    payload: CvrpPayload = instance.payload
    n = payload.n_nodes
    nodes = [_as_node(t) for t in trace]
    if len(nodes) < 2 or any(v is None for v in nodes):
        raise TraceError("malformed route sequence")
    if nodes[0] != 0 or nodes[-1] != 0:
        raise TraceError("route sequence must start and end at the depot")
    seen: set[int] = set()
    load = 0.0
    for prev, node in zip(nodes[:-1], nodes[1:]):
        if node == 0:
            if prev == 0:
                raise TraceError("empty depot-to-depot leg")
            load = 0.0
            continue
        if not (1 <= node < n):
            raise TraceError(f"node {node} out of range")
        if node in seen:
            raise TraceError(f"customer {node} visited twice")
        seen.add(node)
        load += float(payload.demands[node])
        if load > payload.capacity + _EPS:
            raise TraceError(f"capacity exceeded: {load} > {payload.capacity}")
    if len(seen) != n - 1:
        raise TraceError(f"served {len(seen)} of {n - 1} customers")
    order = np.asarray(nodes, dtype=int)
    return float(payload.dist[order[:-1], order[1:]].sum())


def cvrp_optimal_length(dist: np.ndarray, demands, capacity: float) -> float:
    """Exhaustive optimum over customer orderings with optimal capacity splits
    (dynamic program over each giant tour); at most 6 customers."""
    n = dist.shape[0]
    customers = list(range(1, n))
    if len(customers) > 6:
        raise ProblemError("exhaustive routing limited to 6 customers")
    demands = np.asarray(demands, dtype=float)
    best = math.inf
    for perm in permutations(customers):
        k = len(perm)
        cost = [math.inf] * (k + 1)
        cost[0] = 0.0
        for i in range(k):
            if not math.isfinite(cost[i]):
                continue
            load = 0.0
            seg = 0.0
            for j in range(i, k):
                load += demands[perm[j]]
                if load > capacity + _EPS:
                    break
                if j > i:
                    seg += dist[perm[j - 1], perm[j]]
                total = cost[i] + dist[0, perm[i]] + seg + dist[perm[j], 0]
                if total < cost[j + 1]:
                    cost[j + 1] = total
        best = min(best, cost[k])
    return float(best)


# ---------------------------------------------------------------------------
# Built-in deciders and deterministic baselines
# ---------------------------------------------------------------------------

def _first_fit(item: float, bins: np.ndarray) -> np.ndarray:
    return -np.arange(len(bins), dtype=float)


def _best_fit(item: float, bins: np.ndarray) -> np.ndarray:
    return item - bins


def _tsp_nearest(current_node, destination_node, unvisited_nodes, distance_matrix):
    return int(unvisited_nodes[np.argmin(distance_matrix[current_node, unvisited_nodes])])


def _cvrp_nearest_feasible(current_node, depot, unvisited_nodes, rest_capacity, demands, distance_matrix):
    feasible = unvisited_nodes[demands[unvisited_nodes] <= rest_capacity]
    if len(feasible) == 0:
        return int(depot)
    return int(feasible[np.argmin(distance_matrix[current_node, feasible])])


BUILTINS = {
    "first_fit": _first_fit,
    "best_fit": _best_fit,
    "tsp_nearest": _tsp_nearest,
    "cvrp_nearest_feasible": _cvrp_nearest_feasible,
}

BUILTIN_TASK: dict[str, Task] = {
    "first_fit": "obp",
    "best_fit": "obp",
    "tsp_nearest": "tsp",
    "cvrp_nearest_feasible": "cvrp",
}

# Reference sources: the same rules as importable text, used for duplicate
# keys, archives, and cross-checking the out-of-process worker against the
# in-process deciders above.
BUILTIN_SOURCE: dict[str, str] = {
    "first_fit": '''\
import numpy as np

def priority(item: float, bins: np.ndarray) -> np.ndarray:
    return -np.arange(len(bins), dtype=float)
''',
    "best_fit": '''\
import numpy as np

def priority(item: float, bins: np.ndarray) -> np.ndarray:
    return item - bins
''',
    "tsp_nearest": '''\
import numpy as np

def select_next_node(current_node: int, destination_node: int, unvisited_nodes: np.ndarray, distance_matrix: np.ndarray) -> int:
    return int(unvisited_nodes[np.argmin(distance_matrix[current_node, unvisited_nodes])])
''',
    "cvrp_nearest_feasible": '''\
import numpy as np

def select_next_node(current_node: int, depot: int, unvisited_nodes: np.ndarray, rest_capacity: float, demands: np.ndarray, distance_matrix: np.ndarray) -> int:
    feasible = unvisited_nodes[demands[unvisited_nodes] <= rest_capacity]
    if len(feasible) == 0:
        return int(depot)
    return int(feasible[np.argmin(distance_matrix[current_node, feasible])])
''',
}


def builtin(name: str):
    try:
        return BUILTINS[name]
    except KeyError:
        raise ProblemError(f"unknown builtin {name!r}") from None


def builtin_heuristic(name: str) -> Heuristic:
    source = BUILTIN_SOURCE[name]
    return Heuristic(
        id=name,
        thought=f"Built-in {name.replace('_', ' ')} rule.",
        code=source,
        origin="builtin",
    )


def evaluate(decider, instance: ProblemInstance) -> EpisodeResult:
    if instance.task == "obp":
        return eval_obp(decider, instance)
    if instance.task == "tsp":
        return eval_tsp(decider, instance)
    return eval_cvrp(decider, instance)


def verify_trace(instance: ProblemInstance, trace) -> float:
    if instance.task == "obp":
        return verify_obp_trace(instance, trace)
    if instance.task == "tsp":
        return verify_tsp_trace(instance, trace)
    return verify_cvrp_trace(instance, trace)


def _two_opt_cycle(tour: list[int], dist: np.ndarray) -> list[int]:
    """Pass-based first-improvement 2-opt on a closed tour; deterministic."""
    t = np.asarray(tour, dtype=int)
    n = len(t)
    if n < 4:
        return list(t)
    improved = True
    while improved:
        improved = False
        for i in range(n - 2):
            js = np.arange(i + 2, n)
            if i == 0:
                js = js[:-1]  # (0, n-1) are wrap-adjacent edges
            if js.size == 0:
                continue
            a, b = t[i], t[i + 1]
            cs = t[js]
            ds = t[(js + 1) % n]
            delta = dist[a, cs] + dist[b, ds] - dist[a, b] - dist[cs, ds]
            hits = np.nonzero(delta < -1e-12)[0]
            if hits.size:
                j = int(js[hits[0]])
                t[i + 1 : j + 1] = t[i + 1 : j + 1][::-1]
                improved = True
    return list(t)


def _two_opt_path(seq: list[int], dist: np.ndarray) -> list[int]:
    """First-improvement 2-opt on an open path with fixed endpoints."""
    t = np.asarray(seq, dtype=int)
    n = len(t)
    if n < 4:
        return list(t)
    improved = True
    while improved:
        improved = False
        for i in range(n - 3):
            js = np.arange(i + 1, n - 1)
            a, b = t[i], t[i + 1]
            cs = t[js]
            ds = t[js + 1]
            delta = dist[a, cs] + dist[b, ds] - dist[a, b] - dist[cs, ds]
            hits = np.nonzero(delta < -1e-12)[0]
            if hits.size:
                j = int(js[hits[0]])
                t[i + 1 : j + 1] = t[i + 1 : j + 1][::-1]
                improved = True
    return list(t)


def tsp_baseline_from_matrix(dist: np.ndarray) -> float:
    """Nearest-neighbor tour from node 0 improved to a 2-opt local optimum."""
    n = dist.shape[0]
    unvisited = list(range(1, n))
    tour = [0]
    current = 0
    while unvisited:
        arr = np.asarray(unvisited, dtype=int)
        current = int(arr[np.argmin(dist[current, arr])])
        unvisited.remove(current)
        tour.append(current)
    tour = _two_opt_cycle(tour, dist)
    order = np.asarray(tour, dtype=int)
    return float(dist[order[:-1], order[1:]].sum() + dist[order[-1], order[0]])


def tsp_baseline(instance: ProblemInstance) -> float:
    return tsp_baseline_from_matrix(instance.payload.dist)


def cvrp_baseline_from_payload(dist: np.ndarray, demands, capacity: float) -> float:
    """Nearest-feasible-customer routes, each improved with a fixed-endpoint
    2-opt pass."""
    n = dist.shape[0]
    demands = np.asarray(demands, dtype=int)
    unvisited = list(range(1, n))
    routes: list[list[int]] = []
    route = [0]
    rest = float(capacity)
    current = 0
    while unvisited:
        arr = np.asarray(unvisited, dtype=int)
        feasible = arr[demands[arr] <= rest]
        if feasible.size == 0:
            route.append(0)
            routes.append(route)
            route = [0]
            rest = float(capacity)
            current = 0
            continue
        current = int(feasible[np.argmin(dist[current, feasible])])
        route.append(current)
        rest -= float(demands[current])
        unvisited.remove(current)
    route.append(0)
    routes.append(route)
    total = 0.0
    for r in routes:
        improved = _two_opt_path(r, dist)
        order = np.asarray(improved, dtype=int)
        total += float(dist[order[:-1], order[1:]].sum())
    return total


def cvrp_baseline(instance: ProblemInstance) -> float:
    payload: CvrpPayload = instance.payload
    return cvrp_baseline_from_payload(payload.dist, payload.demands, payload.capacity)
