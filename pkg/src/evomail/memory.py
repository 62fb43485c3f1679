"""Compressed experience memory: failure traces, k-medoids compression,
and a bounded LRU store of (features, cached score, trace summary) tuples.

Eviction removes the minimum-last_used entry first, ties by insertion
iteration and then entry id; reads during the consistency loss refresh
last_used.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, asdict
from math import comb
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import _serialize as ser
from .errors import CorruptFile, TraceUnavailable
from .model import ModelState


@dataclass
class TraceSummary:
    """Fixed-size failure evidence: path kinds+confidences and the final
    attention row, flattened."""

    path_kinds: list[str] = field(default_factory=list)
    confidences: list[float] = field(default_factory=list)
    attention_row: list[float] = field(default_factory=list)

    def attention_array(self) -> np.ndarray:
        return np.asarray(self.attention_row, dtype=np.float64)


@dataclass
class MemoryEntry:
    entry_id: int
    features: np.ndarray
    cached_score: float
    trace: Optional[TraceSummary]
    inserted_at: int
    last_used: int


class ExperienceMemory:
    """Bounded LRU store; |entries| <= capacity after every operation."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.entries: list[MemoryEntry] = []
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.entries)

    def insert(self, features: np.ndarray, cached_score: float,
               trace: Optional[TraceSummary], iteration: int) -> MemoryEntry:
        entry = MemoryEntry(self._next_id, np.asarray(features, dtype=np.float64),
                            float(cached_score), trace, iteration, iteration)
        self._next_id += 1
        self.entries.append(entry)
        self._evict()
        return entry

    def touch_all(self, iteration: int):
        for entry in self.entries:
            entry.last_used = max(entry.last_used, iteration)

    def _evict(self):
        while len(self.entries) > self.capacity:
            victim = min(self.entries,
                         key=lambda e: (e.last_used, e.inserted_at, e.entry_id))
            self.entries.remove(victim)

    def feature_matrix(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 0))
        return np.stack([e.features for e in self.entries])


def update_memory(memory: ExperienceMemory, new_entries: Sequence[tuple],
                  m_max: int, iteration: int) -> ExperienceMemory:
    """Insert (features, cached_score, trace) tuples at `iteration`, then
    evict LRU-first down to m_max. Mutates and returns the memory."""
    memory.capacity = m_max
    for features, cached_score, trace in new_entries:
        memory.insert(features, cached_score, trace, iteration)
    memory._evict()
    return memory


def extract_failure_trace(sample_index: int, vector_trace, path_kinds=("email",),
                          confidences=(0.0,)) -> TraceSummary:
    """Summary for a sample scored in a recorded isolated-vector pass.

    Isolated nodes have empty attention rows and a singleton path.
    """
    n = vector_trace.scores.shape[0]
    if not 0 <= sample_index < n:
        raise TraceUnavailable(
            f"sample {sample_index} not in recorded pass of {n} rows")
    return TraceSummary(path_kinds=list(path_kinds),
                        confidences=[float(c) for c in confidences],
                        attention_row=[])


def graph_failure_trace(node_index: int, trace, graph, path) -> TraceSummary:
    """Summary for an email node scored in a recorded graph pass."""
    if node_index not in set(int(i) for i in trace.email_index):
        raise TraceUnavailable(f"node {node_index} was not scored in this pass")
    _, alphas = trace.attention_row(len(trace.alpha), node_index)
    return TraceSummary(
        path_kinds=[s.node_kind for s in path.steps],
        confidences=[s.confidence for s in path.steps],
        attention_row=[float(a) for a in alphas])


def trace_distance(t1: Optional[TraceSummary], t2: Optional[TraceSummary]) -> float:
    """L2 between zero-padded final-layer attention rows; 0 if either missing."""
    if t1 is None or t2 is None:
        return 0.0
    a, b = t1.attention_array(), t2.attention_array()
    width = max(a.size, b.size)
    if width == 0:
        return 0.0
    pa = np.zeros(width)
    pa[: a.size] = a
    pb = np.zeros(width)
    pb[: b.size] = b
    return float(np.linalg.norm(pa - pb))


def sample_distance(e1, e2, alpha_trace: float) -> float:
    """||phi_1 - phi_2||_2 + alpha_trace * trace_dist; works on any objects
    exposing `.features` and `.trace`."""
    d = float(np.linalg.norm(np.asarray(e1.features) - np.asarray(e2.features)))
    return d + alpha_trace * trace_distance(e1.trace, e2.trace)


def _assignment_cost(D: np.ndarray, medoids: Sequence[int]) -> float:
    return float(D[:, list(medoids)].min(axis=1).sum())


def kmedoids_compress(items: Sequence, k: int,
                      distance_fn: Callable[[object, object], float],
                      rng_seed: int = 0) -> list:
    """PAM k-medoids; returns the medoid items.

    Small instances (C(n,k) <= 1000) are solved exactly by enumeration;
    larger ones use seeded farthest-first init plus best-improvement swaps
    (at most 100 rounds). k=0 gives []; k >= n returns all items.
    """
    n = len(items)
    if k <= 0 or n == 0:
        return []
    if k >= n:
        return list(items)

    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = distance_fn(items[i], items[j])

    if comb(n, k) <= 1000:
        best = min(itertools.combinations(range(n), k),
                   key=lambda med: (_assignment_cost(D, med), med))
        return [items[i] for i in best]

    rng = np.random.default_rng(rng_seed)
    medoids = [int(rng.integers(0, n))]
    while len(medoids) < k:
        dmin = D[:, medoids].min(axis=1)
        dmin[medoids] = -1.0
        medoids.append(int(np.argmax(dmin)))
    medoids = sorted(medoids)

    cost = _assignment_cost(D, medoids)
    for _ in range(100):
        best_swap, best_cost = None, cost
        in_set = set(medoids)
        for mi, m in enumerate(medoids):
            for h in range(n):
                if h in in_set:
                    continue
                trial = medoids[:mi] + [h] + medoids[mi + 1:]
                c = _assignment_cost(D, trial)
                if c < best_cost - 1e-15:
                    best_cost, best_swap = c, (mi, h)
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]
        medoids.sort()
        cost = best_cost
    return [items[i] for i in sorted(medoids)]


# ---------------------------------------------------------------------------
# EVOMAIL-MEMORY v1

_KIND = "MEMORY"


def save_memory(path: str | Path, memory: ExperienceMemory) -> None:
    lines = [ser.format_header(_KIND),
             ser.json_line({"capacity": memory.capacity, "next_id": memory._next_id})]
    for e in memory.entries:
        lines.append(ser.json_line({
            "entry_id": e.entry_id,
            "features": ser.array_to_b64(e.features),
            "dim": int(e.features.size),
            "cached_score": e.cached_score,
            "trace": asdict(e.trace) if e.trace is not None else None,
            "inserted_at": e.inserted_at,
            "last_used": e.last_used,
        }))
    ser.atomic_write_text(path, "\n".join(lines) + "\n")


def load_memory(path: str | Path) -> ExperienceMemory:
    lines = ser.read_lines(path, _KIND)
    if not lines:
        raise CorruptFile("missing memory header record", 1)
    head = ser.parse_json_line(lines[0], 1)
    try:
        memory = ExperienceMemory(head["capacity"])
        memory._next_id = head["next_id"]
    except (KeyError, TypeError) as exc:
        raise CorruptFile(f"bad memory header: {exc}", 1) from exc
    for i, line in enumerate(lines[1:], 2):
        rec = ser.parse_json_line(line, i)
        try:
            trace = TraceSummary(**rec["trace"]) if rec["trace"] is not None else None
            memory.entries.append(MemoryEntry(
                entry_id=rec["entry_id"],
                features=ser.b64_to_array(rec["features"], (rec["dim"],), i),
                cached_score=rec["cached_score"], trace=trace,
                inserted_at=rec["inserted_at"], last_used=rec["last_used"]))
        except (KeyError, TypeError) as exc:
            raise CorruptFile(f"bad memory entry: {exc}", i) from exc
    if len(memory.entries) > memory.capacity:
        raise CorruptFile("memory file exceeds its own capacity", 0)
    return memory
