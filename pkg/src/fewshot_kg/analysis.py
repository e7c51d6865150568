"""Correlation analysis and the logical-pattern witness checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Sequence

import numpy as np

from .kg import KnowledgeGraph
from .tasks import FewShotTask

SYMMETRY = "symmetry"
TRANSITIVITY = "transitivity"
_MIN_K = {SYMMETRY: 2, TRANSITIVITY: 3}


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("pearson needs two equal-length sequences of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt((dx * dx).sum()), math.sqrt((dy * dy).sum())
    if sx == 0 or sy == 0:
        raise ValueError("undefined correlation: constant sequence")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


def support_frequency_feature(g: KnowledgeGraph, task: FewShotTask) -> float:
    """Mean of ``ln(1 + degree)`` over support heads and tails in the background graph."""
    ents = task.support.reshape(-1)
    if len(ents) == 0:
        return 0.0
    return float(np.mean(np.log1p(g.degree_index[ents])))


@dataclass
class CorrelationPoint:
    relation: str
    x: float
    y: float


def correlation_points(g: KnowledgeGraph, tasks: Sequence[FewShotTask], per_relation: Sequence[dict]) -> list[CorrelationPoint]:
    """Pair each task's support frequency with its relation's MRR from an evaluation report."""
    mrr = {r["relation"]: r["mrr"] for r in per_relation}
    return [CorrelationPoint(t.relation, support_frequency_feature(g, t), mrr[t.relation])
            for t in tasks if t.relation in mrr]


def entity_correlation_points(g: KnowledgeGraph, tasks: Sequence[FewShotTask],
                              per_relation: Sequence[dict]) -> list[CorrelationPoint]:
    """One point per support entity occurrence, each carrying its relation's MRR."""
    mrr = {r["relation"]: r["mrr"] for r in per_relation}
    return [CorrelationPoint(t.relation, float(np.log1p(g.degree_index[e])), mrr[t.relation])
            for t in tasks if t.relation in mrr for e in t.support.reshape(-1).tolist()]


@dataclass
class WitnessVerdict:
    pattern: str
    witnessed: bool
    witnessing_triples: list[tuple] = field(default_factory=list)


def _pattern(p: str) -> str:
    p = p.lower()
    if p in ("symmetric", SYMMETRY):
        return SYMMETRY
    if p in ("transitive", TRANSITIVITY):
        return TRANSITIVITY
    raise ValueError(f"unknown pattern {p!r}; expected symmetry or transitivity")


def witness_check(support: Sequence[tuple], pattern: str) -> WitnessVerdict:
    """Does the support contain a complete instance of the pattern?

    Symmetry needs ``(a, b)`` and ``(b, a)`` with ``a != b``; transitivity needs
    ``(a, b)``, ``(b, c)`` and ``(a, c)``.
    """
    pattern = _pattern(pattern)
    edges = [tuple(e) for e in support]
    eset = set(edges)
    if pattern == SYMMETRY:
        for a, b in edges:
            if a != b and (b, a) in eset:
                return WitnessVerdict(pattern, True, [(a, b), (b, a)])
        return WitnessVerdict(pattern, False, [])
    for (a, b), (b2, c) in permutations(edges, 2):
        if b == b2 and (a, c) in eset:
            wit = [(a, b), (b, c), (a, c)]
            if len(set(wit)) == 3:
                return WitnessVerdict(pattern, True, wit)
    return WitnessVerdict(pattern, False, [])


def min_witness_k(pattern: str) -> int:
    """Smallest support size that can witness the pattern."""
    return _MIN_K[_pattern(pattern)]
