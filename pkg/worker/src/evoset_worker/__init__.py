"""Out-of-process heuristic runner.

Loads generated heuristic source into a fresh namespace and answers episode
requests over line-delimited JSON on standard streams:

  {"id": i, "op": "load", "code": str}      -> {"id": i, "ok": bool, "error"?: str}
  {"id": i, "op": "eval", "task": t, "payload": {...}}
      -> {"id": i, "ok": true, "raw": num, "trace": [...], "decisions": int, "detours": int}
       | {"id": i, "ok": false, "error": str}
  {"id": i, "op": "ping"}                   -> {"id": i, "ok": true}

The rollout semantics here deliberately duplicate the host evaluators (open
bins only, feasibility-masked priority argmax with lowest-index ties, tours
from node 0 with the destination bound to the start, depot detours for
infeasible routing picks). The host re-verifies every returned trace, and the
cross-path equivalence tests pin the two sides together; any drift is a test
failure, not a silent divergence.

This process is strictly sequential (one request at a time) and never exits on
a heuristic error. It provides no sandboxing beyond a fresh namespace per
load; the host's kill-on-timeout is the only resource limit.
"""

from __future__ import annotations

import ast
import json
import math
import sys

import numpy as np

PROTOCOL_VERSION = 1

_REQUIRED_NAMES = ("priority", "select_next_node")


class LoadRejected(ValueError):
    pass


class RolloutError(ValueError):
    pass


def _validate_top_level(code: str) -> None:
    """Only imports, function/class definitions, and docstrings may appear at
    top level; anything else is stray code and is rejected."""
    try:
        tree = ast.parse(code)
    except SyntaxError as exc:
        raise LoadRejected(f"syntax error: {exc}") from None
    for node in tree.body:
        if isinstance(node, (ast.Import, ast.ImportFrom, ast.FunctionDef, ast.ClassDef)):
            continue
        if isinstance(node, ast.Expr) and isinstance(node.value, ast.Constant) and isinstance(node.value.value, str):
            continue
        raise LoadRejected(f"stray top-level statement: {ast.dump(node)[:60]}")


class LoadedHeuristic:
    """One decision function resolved from loaded source."""

    def __init__(self, code: str):
        _validate_top_level(code)
        namespace: dict = {"np": np, "numpy": np, "math": math}
        try:
            exec(compile(code, "<heuristic>", "exec"), namespace)  # noqa: S102
        except Exception as exc:
            raise LoadRejected(f"execution of source failed: {exc}") from None
        resolved = [n for n in _REQUIRED_NAMES if callable(namespace.get(n))]
        if len(resolved) != 1:
            raise LoadRejected(
                f"expected exactly one of {_REQUIRED_NAMES} defined, found {resolved or 'none'}"
            )
        self.name = resolved[0]
        self.fn = namespace[self.name]


def _euclidean_matrix(coords) -> np.ndarray:
    pts = np.asarray(coords, dtype=float)
    dx = pts[:, 0][:, None] - pts[:, 0][None, :]
    dy = pts[:, 1][:, None] - pts[:, 1][None, :]
    return np.hypot(dx, dy)


def _distances(payload: dict) -> np.ndarray:
    if "coords" in payload and payload["coords"] is not None:
        return _euclidean_matrix(payload["coords"])
    if "dist" in payload and payload["dist"] is not None:
        return np.asarray(payload["dist"], dtype=float)
    raise RolloutError("payload carries neither coords nor dist")


def _as_node(value):
    if isinstance(value, (bool, np.bool_)):
        return None
    if isinstance(value, (int, np.integer)):
        return int(value)
    return None


def rollout_obp(fn, payload: dict) -> dict:
    items = [float(s) for s in payload["items"]]
    capacity = float(payload["capacity"])
    buf = np.empty(16, dtype=float)
    n_bins = 0
    trace: list[int] = []
    decisions = 0
    for item in items:
        rest = buf[:n_bins]
        feasible = rest >= item
        if not feasible.any():
            if n_bins == len(buf):
                buf = np.concatenate([buf, np.empty_like(buf)])
            buf[n_bins] = capacity - item
            n_bins += 1
            trace.append(n_bins - 1)
            continue
        priorities = np.asarray(fn(item, rest.copy()), dtype=float)
        decisions += 1
        if priorities.shape != (n_bins,):
            raise RolloutError("bad-priority-shape")
        if np.isnan(priorities[feasible]).any():
            raise RolloutError("non-finite-priority")
        masked = np.where(feasible, priorities, -math.inf)
        choice = int(np.argmax(masked))
        buf[choice] -= item
        trace.append(choice)
    return {"raw": float(n_bins), "trace": trace, "decisions": decisions, "detours": 0}


def rollout_tsp(fn, payload: dict) -> dict:
    dist = _distances(payload)
    n = dist.shape[0]
    unvisited = list(range(1, n))
    current = 0
    trace = [0]
    decisions = 0
    while unvisited:
        reply = fn(current, 0, np.asarray(unvisited, dtype=int), dist)
        decisions += 1
        nxt = _as_node(reply)
        if nxt is None or nxt not in unvisited:
            raise RolloutError(f"invalid-node: {reply!r}")
        unvisited.remove(nxt)
        trace.append(nxt)
        current = nxt
    order = np.asarray(trace, dtype=int)
    raw = float(dist[order[:-1], order[1:]].sum() + dist[order[-1], order[0]])
    return {"raw": raw, "trace": trace, "decisions": decisions, "detours": 0}


def rollout_cvrp(fn, payload: dict) -> dict:
    dist = _distances(payload)
    n = dist.shape[0]
    demands = np.asarray(payload["demands"], dtype=int)
    capacity = float(payload["capacity"])
    depot = int(payload.get("depot", 0))
    unvisited = list(range(1, n))
    current = depot
    rest = capacity
    trace = [depot]
    decisions = 0
    detours = 0
    while unvisited:
        reply = fn(current, depot, np.asarray(unvisited, dtype=int), rest, demands, dist)
        decisions += 1
        nxt = _as_node(reply)
        if nxt is not None and (nxt == depot or nxt == -1):
            if current == depot:
                raise RolloutError("depot-loop")
            trace.append(depot)
            current = depot
            rest = capacity
            continue
        if nxt is None or nxt not in unvisited:
            raise RolloutError(f"invalid-node: {reply!r}")
        if demands[nxt] > rest:
            trace.append(depot)
            rest = capacity
            detours += 1
        trace.append(nxt)
        rest -= float(demands[nxt])
        unvisited.remove(nxt)
        current = nxt
    if current != depot:
        trace.append(depot)
    order = np.asarray(trace, dtype=int)
    raw = float(dist[order[:-1], order[1:]].sum())
    return {"raw": raw, "trace": trace, "decisions": decisions, "detours": detours}


_ROLLOUTS = {"obp": rollout_obp, "tsp": rollout_tsp, "cvrp": rollout_cvrp}


def handle_frame(frame: dict, loaded: list) -> dict:
    """Dispatch one request frame; ``loaded`` is a one-slot mutable holder."""
    frame_id = frame.get("id")
    if not isinstance(frame_id, int):
        return {"id": -1, "ok": False, "error": "bad-frame"}
    op = frame.get("op")
    if op == "ping":
        return {"id": frame_id, "ok": True}
    if op == "load":
        code = frame.get("code")
        if not isinstance(code, str) or not code.strip():
            return {"id": frame_id, "ok": False, "error": "bad-frame"}
        try:
            loaded[0] = LoadedHeuristic(code)
        except LoadRejected as exc:
            loaded[0] = None
            return {"id": frame_id, "ok": False, "error": str(exc)}
        return {"id": frame_id, "ok": True}
    if op == "eval":
        if loaded[0] is None:
            return {"id": frame_id, "ok": False, "error": "no-heuristic"}
        task = frame.get("task")
        payload = frame.get("payload")
        if task not in _ROLLOUTS or not isinstance(payload, dict):
            return {"id": frame_id, "ok": False, "error": "bad-frame"}
        try:
            result = _ROLLOUTS[task](loaded[0].fn, payload)
        except RolloutError as exc:
            return {"id": frame_id, "ok": False, "error": str(exc)}
        except Exception as exc:  # heuristic raised; report, never exit
            return {"id": frame_id, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
        return {"id": frame_id, "ok": True, **result}
    return {"id": frame_id, "ok": False, "error": "unknown-op"}


def serve(stdin=None, stdout=None) -> None:
    """Read frames until EOF, one response line per request, in order."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    # Heuristic prints must not corrupt the protocol stream.
    sys.stdout = sys.stderr
    loaded: list = [None]
    for line in stdin:
        if not line.strip():
            continue
        try:
            frame = json.loads(line)
            if not isinstance(frame, dict):
                raise ValueError("frame is not an object")
        except ValueError:
            reply = {"id": -1, "ok": False, "error": "bad-frame"}
        else:
            reply = handle_frame(frame, loaded)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
