"""Shared domain types: heuristics, performance vectors/matrices, populations,
problem instances, and run configuration.

Everything here is immutable after construction and safe to share across
threads by reference. Validation happens in ``__post_init__``; nothing in this
module evaluates anything.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Literal, Union

import numpy as np

Task = Literal["obp", "tsp", "cvrp"]
Origin = Literal["init", "cs", "ls", "builtin"]

TASKS: tuple[Task, ...] = ("obp", "tsp", "cvrp")

# Function name each task's heuristic must define (the decision-function
# signature the evaluators call).
REQUIRED_FUNCTION: dict[str, str] = {
    "obp": "priority",
    "tsp": "select_next_node",
    "cvrp": "select_next_node",
}

_PARENT_COUNT: dict[str, int] = {"init": 0, "builtin": 0, "ls": 1, "cs": 2}


class CoreError(ValueError):
    """Raised when a core type's invariants are violated at construction."""


def make_dedupe_key(code: str) -> str:
    """Digest of ``code`` after textual normalization.

    Normalization: drop blank lines and full-line comments, strip
    leading/trailing whitespace per line. Purely textual — an identifier
    rename yields a different key.
    """
    if not code.strip():
        raise CoreError("cannot key empty code")
    lines = []
    for line in code.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        lines.append(stripped)
    normalized = "\n".join(lines)
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()[:16]


def count_function_defs(code: str, name: str) -> int:
    """Number of ``def <name>(`` definitions in ``code`` (textual scan)."""
    return len(re.findall(rf"^\s*def\s+{re.escape(name)}\s*\(", code, re.MULTILINE))


@dataclass(frozen=True)
class Heuristic:
    """One candidate program: a one-sentence thought plus its source code."""

    id: str
    thought: str
    code: str
    origin: Origin
    parent_ids: tuple[str, ...] = ()
    dedupe_key: str = ""

    def __post_init__(self):
        if not self.code.strip():
            raise CoreError(f"heuristic {self.id}: empty code")
        want = _PARENT_COUNT[self.origin]
        if len(self.parent_ids) != want:
            raise CoreError(
                f"heuristic {self.id}: origin {self.origin} requires "
                f"{want} parents, got {len(self.parent_ids)}"
            )
        if not self.dedupe_key:
            object.__setattr__(self, "dedupe_key", make_dedupe_key(self.code))


def new_heuristic(
    task: Task,
    *,
    id: str,
    thought: str,
    code: str,
    origin: Origin,
    parent_ids: tuple[str, ...] = (),
) -> Heuristic:
    """Construct a Heuristic, additionally checking that ``code`` defines the
    task's required decision function exactly once."""
    name = REQUIRED_FUNCTION[task]
    n_defs = count_function_defs(code, name)
    if n_defs != 1:
        raise CoreError(
            f"heuristic {id}: expected exactly one `def {name}(`, found {n_defs}"
        )
    return Heuristic(id=id, thought=thought, code=code, origin=origin, parent_ids=parent_ids)


@dataclass(frozen=True)
class PerformanceVector:
    """Per-instance scores of one heuristic (relative gaps, lower is better).

    An invalid vector (crash, timeout, illegal output on any instance) carries
    the +inf sentinel in every slot so budget accounting stays exact while
    selection can skip it.
    """

    scores: tuple[float, ...]
    valid: bool = True

    def __post_init__(self):
        if not self.scores:
            raise CoreError("empty performance vector")
        if self.valid:
            if not all(math.isfinite(s) for s in self.scores):
                raise CoreError("valid vector must have finite scores")
        else:
            if not all(s == math.inf for s in self.scores):
                raise CoreError("invalid vector must be all +inf")

    @staticmethod
    def sentinel(m: int) -> "PerformanceVector":
        return PerformanceVector(scores=(math.inf,) * m, valid=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class PerformanceMatrix:
    """Scores of a set of heuristics over a fixed, ordered instance list."""

    heuristic_ids: tuple[str, ...]
    rows: tuple[PerformanceVector, ...]
    instance_ids: tuple[str, ...]

    def __post_init__(self):
        if len(self.rows) != len(self.heuristic_ids):
            raise CoreError("row count != heuristic id count")
        m = len(self.instance_ids)
        for hid, row in zip(self.heuristic_ids, self.rows):
            if len(row) != m:
                raise CoreError(f"row {hid}: length {len(row)} != {m} instances")

    @staticmethod
    def empty(instance_ids: tuple[str, ...]) -> "PerformanceMatrix":
        return PerformanceMatrix((), (), instance_ids)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def m(self) -> int:
        return len(self.instance_ids)

    def row_index(self, heuristic_id: str) -> int:
        return self.heuristic_ids.index(heuristic_id)

    def with_row(self, heuristic_id: str, vector: PerformanceVector) -> "PerformanceMatrix":
        if heuristic_id in self.heuristic_ids:
            raise CoreError(f"duplicate heuristic id {heuristic_id}")
        return PerformanceMatrix(
            self.heuristic_ids + (heuristic_id,),
            self.rows + (vector,),
            self.instance_ids,
        )

    @cached_property
    def scores(self) -> np.ndarray:
        """(n_rows, m) float array; sentinel rows appear as +inf."""
        arr = np.array([row.scores for row in self.rows], dtype=float)
        arr.setflags(write=False)
        return arr

    def valid_row_indices(self) -> list[int]:
        return [i for i, row in enumerate(self.rows) if row.valid]


@dataclass(frozen=True)
class Population:
    """Ordered set of n evaluated heuristics forming the current generation."""

    members: tuple[Heuristic, ...]
    generation: int = 0

    def __post_init__(self):
        if self.generation < 0:
            raise CoreError("negative generation")
        keys = [h.dedupe_key for h in self.members]
        if len(set(keys)) != len(keys):
            raise CoreError("population members share a dedupe key")

    @property
    def n(self) -> int:
        return len(self.members)

    def member_ids(self) -> tuple[str, ...]:
        return tuple(h.id for h in self.members)


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=float)
    out = out.copy()
    out.setflags(write=False)
    return out


def _check_distance_matrix(dist: np.ndarray, n: int) -> None:
    if dist.shape != (n, n):
        raise CoreError(f"distance matrix shape {dist.shape}, expected ({n}, {n})")
    if not np.allclose(dist, dist.T, atol=1e-9):
        raise CoreError("distance matrix not symmetric")
    if not np.allclose(np.diag(dist), 0.0, atol=1e-12):
        raise CoreError("distance matrix diagonal not zero")


def _check_unit_square(coords: np.ndarray) -> None:
    if coords.min() < -1e-9 or coords.max() > 1.0 + 1e-9:
        raise CoreError("coordinates outside [0,1]^2 after normalization")


@dataclass(frozen=True)
class ObpPayload:
    items: tuple[float, ...]
    capacity: float

    def __post_init__(self):
        if self.capacity <= 0:
            raise CoreError("capacity must be positive")
        for s in self.items:
            if not (0 < s <= self.capacity):
                raise CoreError(f"item size {s} outside (0, {self.capacity}]")


@dataclass(frozen=True)
class TspPayload:
    dist: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "dist", _readonly(self.dist))
        n = self.dist.shape[0]
        _check_distance_matrix(self.dist, n)
        if self.coords is not None:
            object.__setattr__(self, "coords", _readonly(self.coords))
            if self.coords.shape != (n, 2):
                raise CoreError("coords shape mismatch")
            _check_unit_square(self.coords)

    @property
    def n_nodes(self) -> int:
        return self.dist.shape[0]


@dataclass(frozen=True)
class CvrpPayload:
    dist: np.ndarray
    demands: tuple[int, ...]
    capacity: float
    depot: int = 0
    coords: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "dist", _readonly(self.dist))
        n = self.dist.shape[0]
        _check_distance_matrix(self.dist, n)
        if len(self.demands) != n:
            raise CoreError("demand count != node count")
        if self.depot != 0:
            raise CoreError("depot must be reindexed to node 0")
        if self.demands[self.depot] != 0:
            raise CoreError("depot demand must be 0")
        for i, d in enumerate(self.demands):
            if i == self.depot:
                continue
            if not (0 < d <= self.capacity):
                raise CoreError(f"demand {d} at node {i} outside (0, {self.capacity}]")
        if self.coords is not None:
            object.__setattr__(self, "coords", _readonly(self.coords))
            if self.coords.shape != (n, 2):
                raise CoreError("coords shape mismatch")
            _check_unit_square(self.coords)

    @property
    def n_nodes(self) -> int:
        return self.dist.shape[0]


Payload = Union[ObpPayload, TspPayload, CvrpPayload]

_PAYLOAD_TYPE: dict[str, type] = {"obp": ObpPayload, "tsp": TspPayload, "cvrp": CvrpPayload}


@dataclass(frozen=True)
class ProblemInstance:
    """One task instance plus its baseline score (lower bound for obp,
    reference tour/route length for tsp/cvrp)."""

    id: str
    task: Task
    payload: Payload
    baseline: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise CoreError(f"unknown task {self.task!r}")
        if not isinstance(self.payload, _PAYLOAD_TYPE[self.task]):
            raise CoreError(f"payload type {type(self.payload).__name__} does not match task {self.task}")
        if not (self.baseline > 0):
            raise CoreError(f"baseline must be positive, got {self.baseline}")


@dataclass(frozen=True)
class LlmSettings:
    """Where generations come from: a deterministic offline mock, or an
    OpenAI-compatible chat endpoint."""

    mock: bool = True
    base_url: str = ""
    model: str = ""
    api_key_env: str = "EVOSET_API_KEY"
    temperature: float = 1.0
    max_tokens: int = 2048
    timeout_s: float = 60.0
    max_attempts: int = 3


@dataclass(frozen=True)
class WorkerSettings:
    timeout_s: float = 10.0
    max_code_bytes: int = 65536
    pool_size: int = 2


@dataclass(frozen=True)
class AblationFlags:
    disable_cs: bool = False
    disable_ls: bool = False
    disable_cpm: bool = False

    def __post_init__(self):
        if self.disable_cs and self.disable_ls:
            raise CoreError("cannot disable both reproduction operators")


@dataclass(frozen=True)
class EvolutionConfig:
    task: Task
    population_size: int = 10
    eval_budget: int = 2000
    seed: int = 0
    operator_mix: float = 0.5  # probability of the distance-pairing operator
    ablation: AblationFlags = field(default_factory=AblationFlags)
    llm: LlmSettings = field(default_factory=LlmSettings)
    worker: WorkerSettings = field(default_factory=WorkerSettings)
    retries: int = 10

    def __post_init__(self):
        if self.task not in TASKS:
            raise CoreError(f"unknown task {self.task!r}")
        if self.population_size < 2 and not self.ablation.disable_cs:
            raise CoreError("population_size must be >= 2 (distance pairing needs two members)")
        if self.population_size < 1:
            raise CoreError("population_size must be >= 1")
        # A meaningful run needs eval_budget >= 2 * population_size (one full
        # generation after initialization); >= n is the hard floor so that a
        # degenerate init-only budget is still constructible.
        if self.eval_budget < self.population_size:
            raise CoreError("eval_budget must cover at least the initial population")
        if not (0.0 <= self.operator_mix <= 1.0):
            raise CoreError("operator_mix must lie in [0, 1]")
        if self.retries < 1:
            raise CoreError("retries must be >= 1")

    @property
    def effective_mix(self) -> float:
        if self.ablation.disable_cs:
            return 0.0
        if self.ablation.disable_ls:
            return 1.0
        return self.operator_mix


def with_overrides(config: EvolutionConfig, **kwargs) -> EvolutionConfig:
    return replace(config, **kwargs)
