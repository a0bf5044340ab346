"""Host side of heuristic execution.

Built-in deciders run in-process through the rollout evaluators. Generated
code is shipped to an out-of-process worker that loads each source once per
process, runs whole episodes, and answers over line-delimited JSON on its
standard streams. The host recomputes score and feasibility from the returned
solution trace; nothing from the worker's own arithmetic is trusted.

Wire protocol (one frame per line, responses echo the request id):
  {"id": i, "op": "load", "code": str}      -> {"id": i, "ok": bool, "error"?: str}
  {"id": i, "op": "eval", "task": t, "payload": {...}}
      -> {"id": i, "ok": true, "raw": num, "trace": [int, ...]}
       | {"id": i, "ok": false, "error": str}
  {"id": i, "op": "ping"}                   -> {"id": i, "ok": true}
Unknown ops answer ok:false. Payload fields mirror the instance payloads:
obp {items, capacity}; tsp {coords} or {dist}; cvrp {coords|dist, demands,
capacity, depot}.
"""

from __future__ import annotations

import json
import math
import os
import select
import shlex
import subprocess
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .core import Heuristic, PerformanceVector, ProblemInstance, WorkerSettings
from .problems import EpisodeResult, TraceError, builtin, evaluate, verify_trace

WORKER_CMD_ENV = "EVOSET_WORKER"
_DEFAULT_WORKER_CMD = [sys.executable, "-m", "evoset_worker"]
_LOAD_TIMEOUT_S = 30.0
_SPAWN_FAILURE_LIMIT = 5


class ExecutionError(RuntimeError):
    pass


class _WorkerGone(RuntimeError):
    """Worker died or broke protocol mid-request; the episode is invalid."""


class _WorkerTimeout(RuntimeError):
    pass


@dataclass
class Budget:
    timeout_s: float = 10.0
    memory_hint_mb: int | None = None  # advisory only; no metering is done


@dataclass
class WorkerStats:
    evals: int = 0
    timeouts: int = 0
    crashes: int = 0
    loads: int = 0


def default_worker_cmd() -> list[str]:
    env = os.environ.get(WORKER_CMD_ENV)
    if env:
        return shlex.split(env)
    return list(_DEFAULT_WORKER_CMD)


class WorkerHandle:
    """One worker subprocess: owns its pipes, remembers which heuristic source
    is loaded, and is used by at most one request at a time."""

    def __init__(self, cmd: list[str]):
        self.cmd = cmd
        self.proc: subprocess.Popen | None = None
        self.loaded_key: str | None = None
        self.state = "dead"
        self.stats = WorkerStats()
        self._buffer = b""
        self._next_id = 0

    def spawn(self) -> None:
        self.close()
        self.proc = subprocess.Popen(
            self.cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
        self.loaded_key = None
        self._buffer = b""
        self.state = "idle"

    def alive(self) -> bool:
        return self.proc is not None and self.proc.poll() is None

    def close(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()
        self.proc = None
        self.state = "dead"
        self.loaded_key = None

    def _kill(self) -> None:
        self.close()

    def request(self, frame: dict, timeout_s: float) -> dict:
        """Send one frame and wait for the matching response line."""
        if not self.alive():
            raise _WorkerGone("worker not running")
        self._next_id += 1
        frame = dict(frame, id=self._next_id)
        data = json.dumps(frame) + "\n"
        try:
            self.proc.stdin.write(data.encode("utf-8"))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._kill()
            raise _WorkerGone(f"write failed: {exc}") from None
        line = self._read_line(timeout_s)
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            self._kill()
            raise _WorkerGone(f"unparseable reply: {line[:120]!r}") from None
        if not isinstance(reply, dict) or reply.get("id") != self._next_id:
            self._kill()
            raise _WorkerGone(f"reply id mismatch: {reply!r}")
        return reply

    def _read_line(self, timeout_s: float) -> str:
        deadline = time.monotonic() + timeout_s
        fd = self.proc.stdout.fileno()
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self.stats.timeouts += 1
                self._kill()
                raise _WorkerTimeout(f"no reply within {timeout_s}s")
            ready, _, _ = select.select([fd], [], [], min(remaining, 0.25))
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                self.stats.crashes += 1
                self._kill()
                raise _WorkerGone("worker closed its stdout")
            self._buffer += chunk
        line, _, self._buffer = self._buffer.partition(b"\n")
        return line.decode("utf-8", errors="replace")


class WorkerPool:
    """Fixed-size pool of workers with single-owner request slots. Dead
    workers are respawned before reuse; episodes are distributed across free
    workers and results do not depend on the assignment."""

    def __init__(
        self,
        size: int = 2,
        timeout_s: float = 10.0,
        max_code_bytes: int = 65536,
        worker_cmd: list[str] | None = None,
    ):
        if size < 1:
            raise ExecutionError("pool size must be >= 1")
        self.timeout_s = timeout_s
        self.max_code_bytes = max_code_bytes
        cmd = worker_cmd if worker_cmd is not None else default_worker_cmd()
        self._handles = [WorkerHandle(cmd) for _ in range(size)]
        self._lock = threading.Lock()
        self._spawn_failures = 0
        import queue

        self._free: "queue.Queue[WorkerHandle]" = queue.Queue()
        for h in self._handles:
            self._free.put(h)

    @classmethod
    def from_settings(cls, settings: WorkerSettings, worker_cmd: list[str] | None = None) -> "WorkerPool":
        return cls(
            size=settings.pool_size,
            timeout_s=settings.timeout_s,
            max_code_bytes=settings.max_code_bytes,
            worker_cmd=worker_cmd,
        )

    @property
    def size(self) -> int:
        return len(self._handles)

    @property
    def handles(self) -> list[WorkerHandle]:
        return list(self._handles)

    def close(self) -> None:
        for h in self._handles:
            h.close()

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _ensure_ready(self, handle: WorkerHandle) -> None:
        if handle.alive():
            return
        while True:
            try:
                handle.spawn()
                reply = handle.request({"op": "ping"}, timeout_s=_LOAD_TIMEOUT_S)
                if reply.get("ok") is True:
                    with self._lock:
                        self._spawn_failures = 0
                    return
                raise _WorkerGone(f"bad ping reply: {reply!r}")
            except (_WorkerGone, _WorkerTimeout, OSError) as exc:
                with self._lock:
                    self._spawn_failures += 1
                    failures = self._spawn_failures
                handle.close()
                if failures >= _SPAWN_FAILURE_LIMIT:
                    raise ExecutionError(
                        f"worker pool exhausted: {failures} consecutive spawn failures ({exc})"
                    ) from None

    def _ensure_loaded(self, handle: WorkerHandle, heuristic: Heuristic) -> str | None:
        """Returns a violation string on load refusal, None on success."""
        if handle.loaded_key == heuristic.dedupe_key:
            return None
        reply = handle.request(
            {"op": "load", "code": heuristic.code}, timeout_s=_LOAD_TIMEOUT_S
        )
        handle.stats.loads += 1
        if reply.get("ok") is not True:
            return f"worker-reported: {reply.get('error', 'load failed')}"
        handle.loaded_key = heuristic.dedupe_key
        return None

    def episode(
        self, heuristic: Heuristic, instance: ProblemInstance, timeout_s: float | None = None
    ) -> EpisodeResult:
        timeout = timeout_s if timeout_s is not None else self.timeout_s
        if len(heuristic.code.encode("utf-8")) > self.max_code_bytes:
            return _invalid_episode("code-too-large")
        handle = self._free.get()
        try:
            handle.state = "busy"
            self._ensure_ready(handle)
            load_violation = self._ensure_loaded(handle, heuristic)
            if load_violation is not None:
                return _invalid_episode(load_violation)
            frame = {
                "op": "eval",
                "task": instance.task,
                "payload": wire_payload(instance),
            }
            try:
                reply = handle.request(frame, timeout_s=timeout)
            except _WorkerTimeout:
                return _invalid_episode("timeout")
            except _WorkerGone:
                return _invalid_episode("worker-fault")
            handle.stats.evals += 1
            return self._episode_from_reply(reply, instance)
        finally:
            handle.state = "loaded" if handle.loaded_key else ("idle" if handle.alive() else "dead")
            self._free.put(handle)

    def _episode_from_reply(self, reply: dict, instance: ProblemInstance) -> EpisodeResult:
        if reply.get("ok") is not True:
            return _invalid_episode(f"worker-reported: {reply.get('error', 'unknown')}")
        trace = reply.get("trace")
        if not isinstance(trace, list):
            return _invalid_episode("worker-fault")
        try:
            raw = verify_trace(instance, trace)
        except TraceError as exc:
            return _invalid_episode(f"infeasible-trace: {exc}")
        gap = (raw - instance.baseline) / instance.baseline
        decisions = reply.get("decisions")
        if not isinstance(decisions, int):
            decisions = max(len(trace) - 1, 0)
        return EpisodeResult(
            raw=raw,
            gap=gap,
            decisions=decisions,
            trace=tuple(int(t) for t in trace),
            detours=int(reply.get("detours", 0)),
        )

    def map_episodes(
        self, heuristic: Heuristic, instances: list[ProblemInstance]
    ) -> list[EpisodeResult]:
        if self.size == 1 or len(instances) <= 1:
            return [self.episode(heuristic, inst) for inst in instances]
        with ThreadPoolExecutor(max_workers=self.size) as pool:
            futures = [pool.submit(self.episode, heuristic, inst) for inst in instances]
            return [f.result() for f in futures]


def _invalid_episode(violation: str) -> EpisodeResult:
    return EpisodeResult(
        raw=math.inf, gap=math.inf, decisions=0, trace=(), violation=violation
    )


def wire_payload(instance: ProblemInstance) -> dict:
    payload = instance.payload
    if instance.task == "obp":
        return {"items": list(payload.items), "capacity": payload.capacity}
    if instance.task == "tsp":
        if payload.coords is not None:
            return {"coords": payload.coords.tolist()}
        return {"dist": payload.dist.tolist()}
    out: dict = {
        "demands": list(payload.demands),
        "capacity": payload.capacity,
        "depot": payload.depot,
    }
    if payload.coords is not None:
        out["coords"] = payload.coords.tolist()
    else:
        out["dist"] = payload.dist.tolist()
    return out


def execute(
    heuristic: Heuristic,
    instance: ProblemInstance,
    budget: Budget | None = None,
    pool: WorkerPool | None = None,
) -> EpisodeResult:
    """Run one episode: built-ins in-process, generated code via the pool."""
    budget = budget or Budget()
    if heuristic.origin == "builtin":
        return evaluate(builtin(heuristic.id), instance)
    if pool is None:
        raise ExecutionError("generated code requires a worker pool")
    return pool.episode(heuristic, instance, timeout_s=budget.timeout_s)


def evaluate_on_set(
    heuristic: Heuristic, instances: list[ProblemInstance], pool: WorkerPool | None = None
) -> PerformanceVector:
    """Gap per instance, in instance order. Any single invalid episode makes
    the whole vector the +inf sentinel."""
    if heuristic.origin == "builtin":
        decider = builtin(heuristic.id)
        episodes = [evaluate(decider, inst) for inst in instances]
    else:
        if pool is None:
            raise ExecutionError("generated code requires a worker pool")
        episodes = pool.map_episodes(heuristic, instances)
    if any(ep.violation is not None for ep in episodes):
        return PerformanceVector.sentinel(len(instances))
    return PerformanceVector(scores=tuple(ep.gap for ep in episodes))


@dataclass
class PoolEvaluator:
    """Binds a fixed instance list and a worker pool into the callable the
    evolution engine consumes."""

    instances: list[ProblemInstance]
    pool: WorkerPool | None = None
    instance_ids: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        self.instance_ids = tuple(inst.id for inst in self.instances)

    def evaluate(self, heuristic: Heuristic) -> PerformanceVector:
        return evaluate_on_set(heuristic, self.instances, self.pool)
