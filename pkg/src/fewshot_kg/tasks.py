"""Few-shot task construction: relation splits, support/query sets, candidates, negatives."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .kg import UNKNOWN_TYPE, EntityTypeTable, KnowledgeGraph
from .rng import stream

ALL_REMAINING = "all-remaining"


class TaskError(ValueError):
    pass


@dataclass
class FewShotTask:
    """One relation's support set, query set and ranked candidate pool.

    ``relation`` is the relation name; synthetic relations have no vocabulary id.
    """

    relation: str
    support: np.ndarray  # (K, 2) head, tail
    queries: np.ndarray  # (J, 2) head, true tail
    candidates: np.ndarray  # ascending entity ids, no duplicates
    seed: int = 0
    known: frozenset = field(default_factory=frozenset)  # every (h, t) known positive for the relation

    @property
    def k(self) -> int:
        return len(self.support)

    def to_dict(self) -> dict:
        return {
            "relation": self.relation,
            "support": self.support.tolist(),
            "queries": self.queries.tolist(),
            "candidates": self.candidates.tolist(),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FewShotTask":
        support = np.array(d["support"], dtype=np.int64).reshape(-1, 2)
        queries = np.array(d["queries"], dtype=np.int64).reshape(-1, 2)
        known = frozenset(map(tuple, np.vstack([support, queries]).tolist()))
        return cls(d["relation"], support, queries, np.array(d["candidates"], dtype=np.int64),
                   int(d.get("seed", 0)), known)

    def with_support(self, support: np.ndarray) -> "FewShotTask":
        return FewShotTask(self.relation, np.asarray(support, dtype=np.int64).reshape(-1, 2),
                           self.queries, self.candidates, self.seed, self.known)


@dataclass
class RelationSplit:
    train: list[int]
    valid: list[int]
    test: list[int]

    def __post_init__(self):
        a, b, c = set(self.train), set(self.valid), set(self.test)
        if a & b or a & c or b & c:
            raise TaskError("relation split lists overlap")

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        f = (lambda r: names[r]) if names is not None else (lambda r: r)
        return {k: [f(r) for r in getattr(self, k)] for k in ("train", "valid", "test")}


@dataclass
class NegativeBatch:
    """``tails[i, j]`` is the j-th corrupted tail for positive ``heads[i]``."""

    heads: np.ndarray
    tails: np.ndarray

    def __len__(self) -> int:
        return self.tails.size


def split_relations(relations: Sequence[int], ratios: tuple[int, int, int], seed: int) -> RelationSplit:
    """Seeded split of relations into train/valid/test by absolute counts."""
    n_train, n_valid, n_test = ratios
    if n_train + n_valid + n_test != len(relations):
        raise TaskError(
            f"split counts {ratios} sum to {n_train + n_valid + n_test}, expected {len(relations)} relations"
        )
    perm = stream(seed, "split").permutation(len(relations))
    rel = [relations[i] for i in perm]
    return RelationSplit(rel[:n_train], rel[n_train:n_train + n_valid], rel[n_train + n_valid:])


def validate_split(split: RelationSplit, relations: Iterable[int]) -> None:
    covered = set(split.train) | set(split.valid) | set(split.test)
    if covered != set(relations):
        raise TaskError("split does not cover the task relations exactly")


def build_candidates(g: KnowledgeGraph, types: EntityTypeTable, relation: int,
                     cap: int | None = None, seed: int = 0) -> np.ndarray:
    """Type-constrained candidate tails for ``relation`` (ascending ids).

    Falls back to every entity seen in tail position when all known tails of
    the relation are untyped.  ``cap`` subsamples non-tail candidates.
    """
    pairs = g.pairs(relation)
    if len(pairs) == 0:
        raise TaskError(f"relation {g.relations.name(relation)!r} has no known triples")
    tail_types = {types[t] for t in pairs[:, 1].tolist()}
    tail_types.discard(UNKNOWN_TYPE)
    if tail_types:
        labels = np.array(types.type_of, dtype=object)
        cands = np.flatnonzero(np.isin(labels, list(tail_types)))
    else:
        cands = np.unique(g.triples[:, 2])
    return cap_candidates(cands, pairs[:, 1], cap, seed)


def cap_candidates(cands: np.ndarray, must_keep: np.ndarray, cap: int | None, seed: int) -> np.ndarray:
    cands = np.unique(np.asarray(cands, dtype=np.int64))
    if cap is None or len(cands) <= cap:
        return cands
    keep = np.intersect1d(cands, must_keep)
    rest = np.setdiff1d(cands, keep)
    n_extra = max(cap - len(keep), 0)
    extra = stream(seed, "cap").choice(rest, size=min(n_extra, len(rest)), replace=False)
    return np.union1d(keep, extra)


def task_from_pairs(relation: str, pairs: np.ndarray, k: int, j: int | str,
                    candidates: np.ndarray, seed: int) -> FewShotTask:
    """Seeded K-shot split of a relation's (head, tail) pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    # the same pair may not be both support and query
    _, first = np.unique(pairs, axis=0, return_index=True)
    pairs = pairs[np.sort(first)]
    if k < 0:
        raise TaskError("K must be non-negative")
    if len(pairs) < k + 1:
        raise TaskError(f"relation {relation!r} has {len(pairs)} distinct triples, needs at least K+1 = {k + 1}")
    perm = stream(seed, "task", relation).permutation(len(pairs))
    support = pairs[perm[:k]]
    rest = pairs[perm[k:]]
    if j != ALL_REMAINING:
        if int(j) < 1:
            raise TaskError("J must be >= 1")
        rest = rest[: int(j)]
    missing = np.setdiff1d(rest[:, 1], candidates)
    if len(missing):
        candidates = np.union1d(candidates, missing)
    return FewShotTask(relation, support, rest, np.asarray(candidates, dtype=np.int64), seed,
                       frozenset(map(tuple, pairs.tolist())))


def build_task(g: KnowledgeGraph, relation: int, k: int, j: int | str = ALL_REMAINING, seed: int = 0,
               types: EntityTypeTable | None = None, candidates: np.ndarray | None = None,
               cap: int | None = None) -> FewShotTask:
    """K-shot task for a vocabulary relation; candidates via :func:`build_candidates` unless given."""
    if candidates is None:
        types = types if types is not None else EntityTypeTable.from_vocab(g.entities)
        candidates = build_candidates(g, types, relation, cap=cap, seed=seed)
    return task_from_pairs(g.relations.name(relation), g.pairs(relation), k, j, candidates, seed)


def sample_negatives(task: FewShotTask, positives: Iterable[tuple[int, int]] | np.ndarray, ratio: int,
                     seed: int, known: frozenset | set | None = None) -> NegativeBatch:
    """Corrupt the tail of each positive ``ratio`` times, uniformly over candidates.

    A corrupted tail ``t'`` is rejected when ``(h, t')`` is a known positive of
    the relation (``known`` defaults to the positives themselves).
    """
    pos = np.asarray(list(positives) if not isinstance(positives, np.ndarray) else positives,
                     dtype=np.int64).reshape(-1, 2)
    if ratio < 1:
        raise TaskError("negative ratio must be >= 1")
    known = set(map(tuple, pos.tolist())) if known is None else known
    cands = task.candidates
    rng = stream(seed, "neg", task.relation)
    tails = np.empty((len(pos), ratio), dtype=np.int64)
    for i, (h, t) in enumerate(pos.tolist()):
        allowed = None
        for j in range(ratio):
            for _ in range(64):
                c = int(cands[rng.integers(len(cands))])
                if (h, c) not in known:
                    break
            else:
                # rejection keeps failing: draw from the explicit complement
                if allowed is None:
                    excl = {c for (hh, c) in known if hh == h}
                    allowed = np.array([c for c in cands.tolist() if c not in excl], dtype=np.int64)
                if len(allowed) == 0:
                    raise TaskError(f"no valid corruption for positive ({h}, {t}) of {task.relation!r}")
                c = int(allowed[rng.integers(len(allowed))])
            tails[i, j] = c
    return NegativeBatch(pos[:, 0].copy(), tails)


def save_tasks(tasks: Sequence[FewShotTask], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([t.to_dict() for t in tasks], fh, sort_keys=True)


def load_tasks(path) -> list[FewShotTask]:
    with open(path, encoding="utf-8") as fh:
        return [FewShotTask.from_dict(d) for d in json.load(fh)]
