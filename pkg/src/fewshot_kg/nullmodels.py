"""Synthetic null relations: symmetric, transitive and community-positional."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .louvain import CommunityPartition
from .rng import stream

PATTERNS = ("symmetric", "transitive", "positional")
_SHORT = {"symmetric": "sym", "transitive": "trans", "positional": "pos"}


@dataclass
class SyntheticRelation:
    name: str
    pattern: str
    triples: list[tuple[int, int]]
    provenance: dict = field(default_factory=dict)


def _pool(lcc: Iterable[int], need: int) -> np.ndarray:
    pool = np.array(sorted(lcc), dtype=np.int64)
    if len(pool) < need:
        raise ValueError(f"need at least {need} entities in the component, got {len(pool)}")
    return pool


def gen_symmetric(lcc: Iterable[int], n: int, seed: int, name: str = "null_sym") -> SyntheticRelation:
    """``n`` rounds of: draw two distinct entities, emit both directions (2n edges)."""
    pool = _pool(lcc, 2)
    if n < 1:
        raise ValueError("N must be >= 1")
    rng = stream(seed, "symmetric")
    edges = []
    for _ in range(n):
        h, t = rng.choice(pool, size=2, replace=False).tolist()
        edges += [(h, t), (t, h)]
    return SyntheticRelation(name, "symmetric", edges, {"seed": seed, "N": n})


def gen_transitive(lcc: Iterable[int], n: int, seed: int, name: str = "null_trans") -> SyntheticRelation:
    """``n`` rounds of: draw three distinct entities, emit a closed triangle (3n edges)."""
    pool = _pool(lcc, 3)
    if n < 1:
        raise ValueError("N must be >= 1")
    rng = stream(seed, "transitive")
    edges = []
    for _ in range(n):
        a, b, c = rng.choice(pool, size=3, replace=False).tolist()
        edges += [(a, b), (b, c), (a, c)]
    return SyntheticRelation(name, "transitive", edges, {"seed": seed, "N": n})


def gen_positional(partition: CommunityPartition, n: int, seed: int, name: str = "null_pos") -> SyntheticRelation:
    """``n`` intra-community edges: uniform community, then two distinct members.

    Singleton communities are skipped since they cannot host an edge.
    """
    eligible = [np.array(sorted(c), dtype=np.int64) for c in partition.communities if len(c) >= 2]
    if not eligible:
        raise ValueError("no community has two or more members")
    if n < 1:
        raise ValueError("N must be >= 1")
    rng = stream(seed, "positional")
    edges = []
    for _ in range(n):
        members = eligible[rng.integers(len(eligible))]
        h, t = rng.choice(members, size=2, replace=False).tolist()
        edges.append((h, t))
    return SyntheticRelation(name, "positional", edges,
                             {"seed": seed, "N": n, "communities": len(partition.communities),
                              "eligible_communities": len(eligible)})


def generate_null_relations(lcc: Iterable[int], partition: CommunityPartition, n: int, per_pattern: int,
                            seed: int, patterns: Sequence[str] = PATTERNS) -> list[SyntheticRelation]:
    """``per_pattern`` relations of each requested pattern, each with its own sub-seed."""
    lcc = sorted(lcc)
    out = []
    for pattern in patterns:
        if pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")
        for i in range(per_pattern):
            s = int(stream(seed, "null", pattern, i).integers(2**62))
            name = f"null_{_SHORT[pattern]}_{i}"
            if pattern == "symmetric":
                out.append(gen_symmetric(lcc, n, s, name))
            elif pattern == "transitive":
                out.append(gen_transitive(lcc, n, s, name))
            else:
                out.append(gen_positional(partition, n, s, name))
    return out


def write_null_relations(rels: Sequence[SyntheticRelation], entity_names: Sequence[str], tasks_path: str | Path,
                         sidecar_path: str | Path, extra: dict | None = None) -> None:
    """Task-JSON file (same layout as real task files) plus a pattern/provenance sidecar."""
    tasks = {r.name: [[entity_names[h], r.name, entity_names[t]] for h, t in r.triples] for r in rels}
    side = {r.name: {"pattern": r.pattern, "provenance": r.provenance} for r in rels}
    side = {"relations": side, **(extra or {})}
    Path(tasks_path).write_text(json.dumps(tasks, sort_keys=True), encoding="utf-8")
    Path(sidecar_path).write_text(json.dumps(side, sort_keys=True, indent=1), encoding="utf-8")


def read_null_relations(tasks_path: str | Path, sidecar_path: str | Path, entities) -> list[SyntheticRelation]:
    tasks = json.loads(Path(tasks_path).read_text(encoding="utf-8"))
    side = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))["relations"]
    out = []
    for name in sorted(tasks):
        edges = [(entities.id(h), entities.id(t)) for h, _, t in tasks[name]]
        out.append(SyntheticRelation(name, side[name]["pattern"], edges, side[name]["provenance"]))
    return out
