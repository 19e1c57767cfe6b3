"""Query parsing, task-chain strategies and edit-distance alignment metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

from .clients.prompts import format_counted, format_target
from .clients.replies import ChainReply, ParsedObjects
from .clients.vlm import VlmBackend, ask
from .errors import SchemaError

STRATEGIES = ("full", "relevant", "difficulty", "random", "jump")

__all__ = [
    "ParsedObjects", "TaskChain", "STRATEGIES", "parse_objects", "construct_chain",
    "edit_distance", "waed_model", "waed_human", "load_human_chains", "canonical",
]


@dataclass(frozen=True)
class TaskChain:
    labels: tuple[str, ...]  # relevant labels then target
    order: tuple[int, ...]  # indices into labels; always ends with the target
    strategy: str

    def __post_init__(self):
        n = len(self.labels) - 1
        if not self.order or self.order[-1] != n:
            raise SchemaError("task chain must end with the target", self.order)
        if len(set(self.order)) != len(self.order) or not all(0 <= i <= n for i in self.order):
            raise SchemaError("task chain order is not a permutation subset", self.order)
        if self.strategy == "jump" and len(self.order) > 2:
            raise SchemaError("jump chains have at most two steps", self.order)

    @property
    def sequence(self) -> list[str]:
        return [self.labels[i] for i in self.order]

    @property
    def target(self) -> str:
        return self.labels[-1]


def parse_objects(query: str, vlm: VlmBackend, *, retries: int = 2) -> ParsedObjects:
    if not query.strip():
        raise ValueError("empty query")
    return ask(vlm, "objects_parsing", {"query": query}, retries=retries)


def _chain_from_reply(reply: ChainReply, parsed: ParsedObjects) -> tuple[int, ...]:
    labels = parsed.labels
    n = len(labels) - 1
    order = []
    for name, idx in reply.sequence:
        pos = n if idx == -1 else idx
        if not 0 <= pos <= n:
            raise SchemaError(f"origin_index {idx} out of range", (name, idx))
        if name.strip().casefold() != labels[pos].casefold():
            raise SchemaError(f"name {name!r} does not match object #{idx} ({labels[pos]!r})", (name, idx))
        if pos in order:
            raise SchemaError(f"object {labels[pos]!r} listed twice", (name, idx))
        order.append(pos)
    if n not in order:
        raise SchemaError("reply omits the target object", reply.sequence)
    if order[-1] != n:
        raise SchemaError("target object is not last", reply.sequence)
    return tuple(order)


def _ask_order(query, parsed, counts, vlm, retries) -> tuple[int, ...]:
    rel = list(parsed.relevant_labels)
    bindings = {
        "query": query,
        "relevant_objects": format_counted(rel, counts),
        "target": format_target(parsed.target_label, None if counts is None else counts[parsed.target_label]),
    }
    context = {"labels": list(parsed.labels), "counts": None if counts is None else dict(counts)}
    return ask(
        vlm, "task_chain", bindings, retries=retries, validate=lambda r: _chain_from_reply(r, parsed), context=context
    )


def construct_chain(
    query: str,
    parsed: ParsedObjects,
    candidate_counts: Mapping[str, int],
    strategy: str,
    vlm: VlmBackend,
    rng_seed: int = 0,
    *,
    retries: int = 2,
) -> TaskChain:
    strategy = strategy.lower()
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    missing = [x for x in parsed.labels if x not in candidate_counts]
    if missing:
        raise ValueError(f"candidate counts missing for {missing}")
    n = len(parsed.relevant_labels)
    if n == 0:
        return TaskChain(parsed.labels, (0,), strategy)
    rng = np.random.default_rng(rng_seed)

    if strategy in ("full", "jump"):
        order = _ask_order(query, parsed, candidate_counts, vlm, retries)
        if strategy == "jump":
            order = order if len(order) <= 2 else (order[0], order[-1])
    elif strategy == "relevant":
        order = _ask_order(query, parsed, None, vlm, retries)
    elif strategy == "difficulty":
        counts = [candidate_counts[x] for x in parsed.relevant_labels]
        known = sorted((i for i in range(n) if counts[i] > 0), key=lambda i: (counts[i], i))
        unknown = [i for i in range(n) if counts[i] <= 0]
        order = tuple(known) + tuple(int(unknown[j]) for j in rng.permutation(len(unknown))) + (n,)
    else:  # random
        order = tuple(int(i) for i in rng.permutation(n)) + (n,)
    return TaskChain(parsed.labels, order, strategy)


# --- alignment metrics -----------------------------------------------------


def canonical(x: Hashable) -> Hashable:
    return x.strip().lower() if isinstance(x, str) else x


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


HumanChainSet = Mapping[str, Sequence[tuple[Sequence[str], float]]]


def _canon_seq(seq):
    return [canonical(x) for x in seq]


def waed_task(prediction: Sequence, chains: Sequence[tuple[Sequence, float]]) -> float:
    if not chains:
        raise ValueError("task has no human sequences")
    pred = _canon_seq(prediction)
    total = sum(w for _, w in chains)
    return sum(w * edit_distance(pred, _canon_seq(h)) for h, w in chains) / total


def waed_model(predictions: Mapping[str, Sequence], humans: HumanChainSet) -> float:
    """Per-task weighted mean edit distance to human chains, averaged over tasks."""
    missing = sorted(set(predictions) ^ set(humans))
    if missing:
        raise ValueError(f"task ids not present in both predictions and human chains: {missing}")
    if not predictions:
        raise ValueError("no tasks")
    empty = [t for t in humans if not humans[t]]
    if empty:
        raise ValueError(f"tasks without human data: {empty}")
    return float(np.mean([waed_task(predictions[t], humans[t]) for t in sorted(predictions)]))


def waed_human_task(chains: Sequence[tuple[Sequence, float]]) -> float:
    total = sum(w for _, w in chains)
    seqs = [_canon_seq(h) for h, _ in chains]
    out = 0.0
    for i in range(len(chains)):
        for j in range(i + 1, len(chains)):
            out += chains[i][1] * chains[j][1] / total**2 * edit_distance(seqs[i], seqs[j])
    return out


def waed_human(humans: HumanChainSet) -> float:
    """Pairwise human inconsistency, tasks weighted by total respondent weight."""
    if not humans:
        raise ValueError("no tasks")
    num = den = 0.0
    for chains in humans.values():
        w = sum(x for _, x in chains)
        num += w * waed_human_task(chains)
        den += w
    return num / den


def load_human_chains(path: str | Path) -> dict[str, list[tuple[list[str], float]]]:
    data = json.loads(Path(path).read_text())
    out: dict[str, list[tuple[list[str], float]]] = {}
    for task in data.get("tasks", []):
        tid = str(task["task_id"])
        chains = []
        for c in task["chains"]:
            w = float(c["weight"])
            if not w > 0:
                raise ValueError(f"task {tid}: chain weight must be positive, got {w}")
            chains.append((list(c["sequence"]), w))
        if tid in out:
            raise ValueError(f"duplicate task id {tid}")
        out[tid] = chains
    return out
