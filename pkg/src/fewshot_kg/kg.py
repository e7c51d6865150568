"""Knowledge-graph data model, ingestion, connectivity and degree statistics."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNKNOWN_TYPE = "unknown"


class ParseError(ValueError):
    """Malformed triple file."""


class Vocab:
    """Bidirectional string <-> dense id map, ids assigned at first appearance."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        for n in names:
            self.add(n)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._ids[name] = idx
            self._names.append(name)
        return idx

    def id(self, name: str) -> int:
        return self._ids[name]

    def get(self, name: str, default=None):
        return self._ids.get(name, default)

    def name(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._names == other._names


class KnowledgeGraph:
    """Immutable triple store over integer ids.

    ``triples`` is an ``(m, 3)`` int64 array of ``(head, relation, tail)``.
    Degree and adjacency indices are built on construction.
    """

    def __init__(self, entities: Vocab, relations: Vocab, triples: np.ndarray):
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if len(triples):
            if triples[:, [0, 2]].min() < 0 or triples[:, [0, 2]].max() >= len(entities):
                raise ValueError("triple references an entity outside the vocabulary")
            if triples[:, 1].min() < 0 or triples[:, 1].max() >= len(relations):
                raise ValueError("triple references a relation outside the vocabulary")
        self.entities = entities
        self.relations = relations
        self.triples = triples
        self.triples.setflags(write=False)
        n = len(entities)
        self.degree_index = (
            np.bincount(triples[:, 0], minlength=n) + np.bincount(triples[:, 2], minlength=n)
        ).astype(np.int64)
        self.degree_index.setflags(write=False)
        self._adjacency: list[list[tuple[int, int, int]]] | None = None
        self._by_relation: dict[int, np.ndarray] | None = None

    @classmethod
    def from_strings(
        cls,
        triples: Iterable[Sequence[str]],
        entities: Vocab | None = None,
        relations: Vocab | None = None,
    ) -> "KnowledgeGraph":
        """Build a graph from string triples, deduplicating repeats."""
        entities = Vocab() if entities is None else entities
        relations = Vocab() if relations is None else relations
        seen: set[tuple[int, int, int]] = set()
        rows: list[tuple[int, int, int]] = []
        dupes = 0
        for h, r, t in triples:
            row = (entities.add(h), relations.add(r), entities.add(t))
            if row in seen:
                dupes += 1
                continue
            seen.add(row)
            rows.append(row)
        g = cls(entities, relations, np.array(rows, dtype=np.int64).reshape(-1, 3))
        logger.info(
            "ingest: %d entities, %d relations, %d triples, %d duplicates dropped",
            len(entities), len(relations), len(rows), dupes,
        )
        g.duplicates_dropped = dupes
        return g

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def adjacency(self) -> list[list[tuple[int, int, int]]]:
        """Per-entity ``(neighbor, relation, direction)``; direction 0 = outgoing, 1 = incoming."""
        if self._adjacency is None:
            adj: list[list[tuple[int, int, int]]] = [[] for _ in range(self.n_entities)]
            for h, r, t in self.triples.tolist():
                adj[h].append((t, r, 0))
                adj[t].append((h, r, 1))
            self._adjacency = adj
        return self._adjacency

    def pairs(self, relation: int) -> np.ndarray:
        """``(k, 2)`` array of (head, tail) for one relation, in storage order."""
        if self._by_relation is None:
            order = np.argsort(self.triples[:, 1], kind="stable")
            rels = self.triples[order, 1]
            bounds = np.searchsorted(rels, np.arange(self.n_relations + 1))
            self._by_relation = {
                r: self.triples[order[bounds[r]:bounds[r + 1]]][:, [0, 2]]
                for r in range(self.n_relations)
            }
        return self._by_relation.get(relation, np.zeros((0, 2), dtype=np.int64))

    def relation_ids_present(self) -> list[int]:
        return sorted(set(self.triples[:, 1].tolist()))

    def restrict(self, keep_relations: Iterable[int] | None = None,
                 drop_relations: Iterable[int] | None = None) -> "KnowledgeGraph":
        """Sub-graph over a relation subset; vocabularies are shared."""
        mask = np.ones(len(self.triples), dtype=bool)
        if keep_relations is not None:
            mask &= np.isin(self.triples[:, 1], list(keep_relations))
        if drop_relations is not None:
            mask &= ~np.isin(self.triples[:, 1], list(drop_relations))
        return KnowledgeGraph(self.entities, self.relations, self.triples[mask].copy())

    def string_triples(self) -> list[tuple[str, str, str]]:
        e, r = self.entities, self.relations
        return [(e.name(h), r.name(rel), e.name(t)) for h, rel, t in self.triples.tolist()]

    def write_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for h, r, t in self.string_triples():
                fh.write(f"{h}\t{r}\t{t}\n")


def read_string_triples(path: str | Path, fmt: str = "tsv") -> list[tuple[str, str, str]]:
    """Read raw string triples from a background TSV or a task JSON file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such triple file: {path}")
    if fmt == "tsv":
        out = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n").rstrip("\r")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
                out.append((fields[0], fields[1], fields[2]))
        return out
    if fmt == "json":
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        data = json.loads(text) if text.strip() else {}
        if not isinstance(data, dict):
            raise ParseError(f"{path}: task file must map relation name -> triples")
        out = []
        for rel, rows in data.items():
            for i, row in enumerate(rows):
                if len(row) != 3:
                    raise ParseError(f"{path}: relation {rel!r} item {i}: expected [head, relation, tail]")
                if row[1] != rel:
                    raise ParseError(
                        f"{path}: relation {rel!r} item {i}: middle element {row[1]!r} disagrees with key"
                    )
                out.append((str(row[0]), str(row[1]), str(row[2])))
        return out
    raise ValueError(f"unknown triple format {fmt!r} (expected 'tsv' or 'json')")


def parse_triples(path: str | Path, fmt: str = "tsv") -> KnowledgeGraph:
    return KnowledgeGraph.from_strings(read_string_triples(path, fmt))


def largest_connected_component(g: KnowledgeGraph) -> set[int]:
    """Vertex set of the largest undirected component.

    Only entities touching at least one triple count as vertices.  Ties go to
    the component with the smallest minimum entity id.
    """
    if len(g.triples) == 0:
        return set()
    n = g.n_entities
    parent = np.arange(n)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for h, _, t in g.triples.tolist():
        a, b = find(h), find(t)
        if a != b:
            # smaller id becomes root, so a root is its component's minimum id
            if a < b:
                parent[b] = a
            else:
                parent[a] = b
    present = np.zeros(n, dtype=bool)
    present[g.triples[:, 0]] = True
    present[g.triples[:, 2]] = True
    roots = np.array([find(i) if present[i] else -1 for i in range(n)])
    labels, counts = np.unique(roots[present], return_counts=True)
    best = labels[np.flatnonzero(counts == counts.max())].min()
    return set(np.flatnonzero(roots == best).tolist())


@dataclass
class DegreeStats:
    median_degree: int
    max_degree: int
    max_degree_entity: int
    max_degree_fraction: float
    top_k: list[tuple[int, int]] = field(default_factory=list)

    def to_dict(self, g: KnowledgeGraph | None = None) -> dict:
        name = (lambda e: g.entities.name(e)) if g is not None else (lambda e: e)
        return {
            "median_degree": self.median_degree,
            "max_degree": self.max_degree,
            "max_degree_entity": name(self.max_degree_entity),
            "max_degree_fraction": self.max_degree_fraction,
            "top_k": [[name(e), d] for e, d in self.top_k],
        }


def degree_stats(g: KnowledgeGraph, k: int = 100) -> DegreeStats:
    """Degree summary over all vocabulary entities (lower median for even counts)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    deg = g.degree_index
    if len(deg) == 0:
        raise ValueError("no entities")
    srt = np.sort(deg, kind="stable")
    median = int(srt[(len(srt) - 1) // 2])
    # descending degree, ascending id among ties
    order = np.lexsort((np.arange(len(deg)), -deg))
    top = order[:k]
    hub = int(order[0])
    nbrs = {v for v, _, _ in g.adjacency[hub]} - {hub}
    return DegreeStats(
        median_degree=median,
        max_degree=int(deg[hub]),
        max_degree_entity=hub,
        max_degree_fraction=len(nbrs) / len(deg),
        top_k=[(int(e), int(deg[e])) for e in top],
    )


def entity_type_of(identifier: str) -> str:
    """Type label of a NELL-style ``concept:<type>:<name>`` id, else ``"unknown"``."""
    parts = identifier.split(":")
    if len(parts) >= 2 and parts[1]:
        return parts[1]
    return UNKNOWN_TYPE


@dataclass
class EntityTypeTable:
    type_of: list[str]

    @classmethod
    def from_vocab(cls, entities: Vocab) -> "EntityTypeTable":
        return cls([entity_type_of(n) for n in entities.names])

    def __getitem__(self, entity: int) -> str:
        return self.type_of[entity]


@dataclass
class Dataset:
    """Full graph plus its background view and the released task split.

    ``graph`` holds background and task triples over one shared vocabulary;
    ``background`` drops every task relation.
    """

    graph: KnowledgeGraph
    background: KnowledgeGraph
    task_relations: dict[str, list[int]]
    types: EntityTypeTable

    @property
    def all_task_relations(self) -> list[int]:
        return [r for rels in self.task_relations.values() for r in rels]


def load_dataset(background: str | Path, tasks: dict[str, str | Path]) -> Dataset:
    """Load a background TSV and task JSON files keyed by split name."""
    rows = read_string_triples(background, "tsv")
    task_names: dict[str, list[str]] = {}
    for split, path in tasks.items():
        t_rows = read_string_triples(path, "json")
        task_names[split] = list(dict.fromkeys(r for _, r, _ in t_rows))
        rows.extend(t_rows)
    graph = KnowledgeGraph.from_strings(rows)
    task_rel = {s: [graph.relations.id(n) for n in names] for s, names in task_names.items()}
    all_task = [r for rels in task_rel.values() for r in rels]
    if len(set(all_task)) != len(all_task):
        raise ParseError("a task relation appears in more than one split file")
    bg = graph.restrict(drop_relations=all_task)
    return Dataset(graph, bg, task_rel, EntityTypeTable.from_vocab(graph.entities))

