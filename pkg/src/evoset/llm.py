"""Prompt construction, reply parsing, and the two generator backends.

Prompts follow a fixed three-part scheme: the task description, an instruction
to describe the new algorithm in one boxed sentence, and the function template
to implement. The pairing variant additionally embeds two parent heuristics
and asks for something different from both; the refinement variant embeds one
parent and asks for an improved version.

Generators are anything with ``generate(prompt, rng) -> str``. The offline
mock renders a parameterized scoring heuristic with rng-drawn coefficients, so
full runs are reproducible and need no network; the live backend talks to an
OpenAI-compatible chat-completions endpoint.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass
from typing import Protocol

import httpx
import numpy as np

from .core import Heuristic, LlmSettings, Task, make_dedupe_key

PromptKind = str  # "init" | "cs" | "ls"


class GenerationError(RuntimeError):
    pass


class ParseFailure(ValueError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason  # "no-thought" | "no-code"


TASK_DESCRIPTIONS: dict[str, str] = {
    "obp": (
        "Implement a function that returns the priority with which we want to "
        "add an item to each bin."
    ),
    "tsp": (
        "Given a set of nodes with their coordinates, you need to find the "
        "shortest route that visits each node once and returns to the starting "
        "node. The task can be solved step-by-step by starting from the current "
        "node and iteratively choosing the next node. Help me design a novel "
        "algorithm that is different from the algorithms in literature to "
        "select the next node in each step."
    ),
    "cvrp": (
        "Given a set of customers and a fleet of vehicles with limited "
        "capacity, the task is to design a novel algorithm to select the next "
        "node in each step, with the objective of minimizing the total cost."
    ),
}

TASK_TEMPLATES: dict[str, str] = {
    "obp": '''\
import numpy as np
def priority(item: float, bins: np.ndarray) -> np.ndarray:
    """Returns priority with which we want to add item to each bin.
    Args:
        item: Size of item to be added to the bin.
        bins: Array of capacities for each bin.
    Return:
        Array of same size as bins with priority score of each bin.
    """
    return item - bins
''',
    "tsp": '''\
import numpy as np
def select_next_node(current_node: int, destination_node: int, unvisited_nodes: np.ndarray, distance_matrix: np.ndarray) -> int:
    """
    Design a novel algorithm to select the next node in each step.

    Args:
    current_node: ID of the current node.
    destination_node: ID of the destination node.
    unvisited_nodes: Array of IDs of unvisited nodes.
    distance_matrix: Distance matrix of nodes.

    Return:
    ID of the next node to visit.
    """
    next_node = unvisited_nodes[0]
    return next_node
''',
    "cvrp": '''\
import numpy as np
def select_next_node(current_node: int, depot: int, unvisited_nodes: np.ndarray, rest_capacity: np.ndarray, demands: np.ndarray, distance_matrix: np.ndarray) -> int:
    """Design a novel algorithm to select the next node in each step.
    Args:
        current_node: ID of the current node.
        depot: ID of the depot.
        unvisited_nodes: Array of IDs of unvisited nodes.
        rest_capacity: rest capacity of vehicle
        demands: demands of nodes
        distance_matrix: Distance matrix of nodes.
    Return:
        ID of the next node to visit.
    """
    best_score = -1
    next_node = -1
    for node in unvisited_nodes:
        demand = demands[node]
        distance = distance_matrix[current_node][node]
        if demand <= rest_capacity:
            score = demand / distance
            if score > best_score:
                best_score = score
                next_node = node
    return next_node
''',
}

_BOXED_INSTRUCTION = (
    "First, describe your new algorithm and main steps in one sentence. "
    "The description must be inside within boxed {{}}."
)
_IMPLEMENT_INSTRUCTION = "Next, implement the following Python function:"
_NO_EXPLANATIONS = "Do not give additional explanations."
CS_STRATEGY_SENTENCE = (
    "These algorithms are effective for solving different instance "
    "distributions. Please help me create a new algorithm that is different "
    "from the given ones."
)
LS_STRATEGY_SENTENCE = (
    "Please assist me in creating an improved version of the algorithm provided."
)

_PARENTS_PER_KIND = {"init": 0, "cs": 2, "ls": 1}


@dataclass(frozen=True)
class PromptBundle:
    kind: PromptKind
    text: str
    task: Task
    parents: tuple[Heuristic, ...] = ()


@dataclass(frozen=True)
class GeneratorReply:
    raw: str
    thought: str
    code: str


def _render_parent(index: int, parent: Heuristic) -> str:
    return (
        f"No.{index} algorithm and its code are:\n"
        f"Algorithm description: {parent.thought}\n"
        f"Code:\n{parent.code}"
    )


def build_prompt(kind: PromptKind, task: Task, parents=()) -> PromptBundle:
    parents = tuple(parents)
    if kind not in _PARENTS_PER_KIND:
        raise ValueError(f"unknown prompt kind {kind!r}")
    want = _PARENTS_PER_KIND[kind]
    if len(parents) != want:
        raise ValueError(f"{kind} prompt needs {want} parents, got {len(parents)}")

    parts = [TASK_DESCRIPTIONS[task], ""]
    if kind == "cs":
        parts.append("I have 2 existing algorithms with their codes as follows:")
        for i, parent in enumerate(parents, start=1):
            parts.append(_render_parent(i, parent))
        parts.append("")
        parts.append(CS_STRATEGY_SENTENCE)
        parts.append("")
    elif kind == "ls":
        parts.append("I have one algorithm with its code as follows:")
        parts.append(_render_parent(1, parents[0]))
        parts.append("")
        parts.append(LS_STRATEGY_SENTENCE)
        parts.append("")
    parts.append(_BOXED_INSTRUCTION)
    parts.append("")
    parts.append(_IMPLEMENT_INSTRUCTION)
    parts.append(TASK_TEMPLATES[task])
    parts.append(_NO_EXPLANATIONS)
    return PromptBundle(kind=kind, text="\n".join(parts), task=task, parents=parents)


_THOUGHT_RE = re.compile(r"\{\{(.*?)\}\}", re.DOTALL)
_FENCE_RE = re.compile(r"```[ \t]*[A-Za-z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)
_DEF_RE = re.compile(r"^[ \t]*def\s+\w+\s*\(", re.MULTILINE)


def parse_reply(raw: str) -> GeneratorReply:
    """Extract the boxed one-sentence description and the code block.

    The thought is the first {{...}} span; the code is the first fenced block,
    falling back to everything from the first function definition onward.
    """
    if not raw.strip():
        raise ParseFailure("no-thought")
    thought_match = _THOUGHT_RE.search(raw)
    if thought_match is None:
        raise ParseFailure("no-thought")
    thought = thought_match.group(1).strip()

    fence = _FENCE_RE.search(raw)
    if fence is not None:
        code = fence.group(1).strip()
    else:
        def_match = _DEF_RE.search(raw)
        if def_match is None:
            raise ParseFailure("no-code")
        code = raw[def_match.start():].strip()
    if not code:
        raise ParseFailure("no-code")
    return GeneratorReply(raw=raw, thought=thought, code=code)


class Generator(Protocol):
    def generate(self, prompt: PromptBundle, rng: np.random.Generator) -> str: ...


class MockGenerator:
    """Deterministic offline stand-in: renders a scoring heuristic whose
    coefficients come from the caller's rng, so (seed, call index) fully
    determines the reply. Replies always parse and always define the required
    function."""

    def generate(self, prompt: PromptBundle, rng: np.random.Generator) -> str:
        parent_keys = {p.dedupe_key for p in prompt.parents}
        for _ in range(8):
            thought, code = self._render(prompt.task, rng)
            if make_dedupe_key(code) not in parent_keys:
                break
        return f"{{{{{thought}}}}}\n```python\n{code}\n```\n"

    def _render(self, task: Task, rng: np.random.Generator) -> tuple[str, str]:
        if task == "obp":
            return self._render_obp(rng)
        if task == "tsp":
            return self._render_tsp(rng)
        return self._render_cvrp(rng)

    def _render_obp(self, rng: np.random.Generator) -> tuple[str, str]:
        kind = int(rng.integers(0, 4))
        if kind == 0:
            # signed leftover weight: positive acts best-fit, negative worst-fit
            a = rng.uniform(-1.5, 2.5)
            b = rng.uniform(0.0, 3.0)
            t = rng.uniform(0.0, 20.0)
            thought = (
                f"Score bins by leftover space with weight {a:.3f} and a snugness "
                f"bonus of {b:.3f} for leftovers under {t:.3f}."
            )
            body = f'''\
    leftover = bins - item
    snug = np.where(leftover <= {t:.3f}, 1.0, 0.0)
    return -({a:.3f}) * leftover + ({b:.3f}) * snug'''
        elif kind == 1:
            c = rng.uniform(0.2, 8.0)
            thought = (
                f"Prefer the bin whose leftover after packing is smallest, smoothed "
                f"by {c:.3f} to soften exact fits."
            )
            body = f'''\
    leftover = bins - item
    return 1.0 / (leftover + {c:.3f})'''
        elif kind == 2:
            a = rng.uniform(0.0, 1.5)
            w = rng.uniform(0.0, 2.0)
            thought = (
                f"Blend tight packing (weight {a:.3f}) with first-fit order "
                f"(index weight {w:.3f})."
            )
            body = f'''\
    leftover = bins - item
    return -({a:.3f}) * leftover - ({w:.3f}) * np.arange(len(bins), dtype=float)'''
        else:
            t = rng.uniform(0.0, 40.0)
            p = rng.uniform(1.0, 2.5)
            thought = (
                f"Target a leftover of {t:.3f} per bin, penalizing deviations with "
                f"exponent {p:.3f}."
            )
            body = f'''\
    leftover = bins - item
    return -np.abs(leftover - {t:.3f}) ** {p:.3f}'''
        code = f'''\
import numpy as np

def priority(item: float, bins: np.ndarray) -> np.ndarray:
{body}
'''
        return thought, code

    def _render_tsp(self, rng: np.random.Generator) -> tuple[str, str]:
        kind = int(rng.integers(0, 3))
        if kind == 0:
            b = rng.uniform(-0.6, 0.6)
            c = rng.uniform(-0.6, 0.6)
            thought = (
                f"Pick the node minimizing current distance plus {b:.3f} times the "
                f"return distance and {c:.3f} times the remaining spread."
            )
            body = f'''\
    d_cur = distance_matrix[current_node, unvisited_nodes]
    d_home = distance_matrix[destination_node, unvisited_nodes]
    spread = distance_matrix[np.ix_(unvisited_nodes, unvisited_nodes)].mean(axis=1)
    score = d_cur + ({b:.3f}) * d_home + ({c:.3f}) * spread'''
        elif kind == 1:
            b = rng.uniform(0.0, 1.2)
            thought = (
                f"Choose greedily by current distance plus {b:.3f} times each "
                f"candidate's onward nearest-neighbor distance."
            )
            body = f'''\
    d_cur = distance_matrix[current_node, unvisited_nodes]
    sub = distance_matrix[np.ix_(unvisited_nodes, unvisited_nodes)].copy()
    np.fill_diagonal(sub, np.inf)
    onward = sub.min(axis=1)
    onward = np.where(np.isfinite(onward), onward, 0.0)
    score = d_cur + ({b:.3f}) * onward'''
        else:
            b = rng.uniform(0.1, 1.5)
            thought = (
                f"Weight current distance against leaving hard-to-reach nodes for "
                f"later, with isolation weight {b:.3f}."
            )
            body = f'''\
    d_cur = distance_matrix[current_node, unvisited_nodes]
    sub = distance_matrix[np.ix_(unvisited_nodes, unvisited_nodes)]
    isolation = sub.sum(axis=1) / max(len(unvisited_nodes), 1)
    score = d_cur - ({b:.3f}) * isolation'''
        code = f'''\
import numpy as np

def select_next_node(current_node: int, destination_node: int, unvisited_nodes: np.ndarray, distance_matrix: np.ndarray) -> int:
{body}
    return int(unvisited_nodes[np.argmin(score)])
'''
        return thought, code

    def _render_cvrp(self, rng: np.random.Generator) -> tuple[str, str]:
        kind = int(rng.integers(0, 3))
        if kind == 0:
            b = rng.uniform(-0.6, 0.6)
            c = rng.uniform(-0.8, 0.8)
            thought = (
                f"Visit the feasible customer minimizing travel plus {b:.3f} times "
                f"the depot distance minus {c:.3f} times the demand fill."
            )
            body = f'''\
    d = distance_matrix[current_node, feasible]
    home = distance_matrix[feasible, depot]
    fill = demands[feasible] / (rest_capacity + 1e-9)
    score = d + ({b:.3f}) * home - ({c:.3f}) * fill
    return int(feasible[np.argmin(score)])'''
        elif kind == 1:
            p = rng.uniform(0.3, 2.0)
            thought = (
                f"Maximize demand served per unit of travel, with demand exponent {p:.3f}."
            )
            body = f'''\
    d = distance_matrix[current_node, feasible]
    score = demands[feasible].astype(float) ** {p:.3f} / (d + 1e-9)
    return int(feasible[np.argmax(score)])'''
        else:
            b = rng.uniform(0.2, 1.2)
            thought = (
                f"Pick by detour savings against a depot round trip, weighted {b:.3f}."
            )
            body = f'''\
    d = distance_matrix[current_node, feasible]
    saving = distance_matrix[current_node, depot] + distance_matrix[depot, feasible] - d
    score = d - ({b:.3f}) * saving
    return int(feasible[np.argmin(score)])'''
        code = f'''\
import numpy as np

def select_next_node(current_node: int, depot: int, unvisited_nodes: np.ndarray, rest_capacity: float, demands: np.ndarray, distance_matrix: np.ndarray) -> int:
    feasible = unvisited_nodes[demands[unvisited_nodes] <= rest_capacity]
    if len(feasible) == 0:
        return int(depot)
{body}
'''
        return thought, code


class ChatEndpointGenerator:
    """OpenAI-compatible chat-completions client with retry and exponential
    backoff. One user message per call; sampling is left to the endpoint's
    defaults except for the configured temperature."""

    def __init__(
        self,
        settings: LlmSettings,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
        backoff_s: float = 1.0,
    ):
        if not settings.base_url:
            raise GenerationError("endpoint base_url is required for live generation")
        self.settings = settings
        self.api_key = api_key if api_key is not None else os.environ.get(settings.api_key_env, "")
        self._client = httpx.Client(
            base_url=settings.base_url.rstrip("/"),
            timeout=settings.timeout_s,
            transport=transport,
        )
        self.backoff_s = backoff_s

    def generate(self, prompt: PromptBundle, rng: np.random.Generator) -> str:
        payload = {
            "model": self.settings.model,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": self.settings.temperature,
            "max_tokens": self.settings.max_tokens,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.settings.max_attempts):
            try:
                resp = self._client.post("/chat/completions", json=payload, headers=headers)
                if resp.status_code >= 400:
                    raise GenerationError(f"endpoint error {resp.status_code}: {resp.text[:200]}")
                body = resp.json()
                return body["choices"][0]["message"]["content"]
            except Exception as exc:
                last_error = exc
                if attempt + 1 < self.settings.max_attempts:
                    time.sleep(self.backoff_s * (2**attempt))
        raise GenerationError(f"generation failed after {self.settings.max_attempts} attempts: {last_error}")

    def close(self):
        self._client.close()


def make_generator(settings: LlmSettings) -> Generator:
    if settings.mock:
        return MockGenerator()
    return ChatEndpointGenerator(settings)
