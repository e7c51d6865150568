"""Ranking metrics, evaluation reports and null-model probing."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kg import KnowledgeGraph
from .model import ModelState, adapt, score_candidates
from .rng import stream
from .tasks import ALL_REMAINING, FewShotTask, cap_candidates, task_from_pairs

METRICS = ("mrr", "hits1", "hits5", "hits10")


def rank_query(scores, true_index: int, ids: Sequence[int] | None = None):
    """Rank of the true candidate, higher score first, ties broken by ascending id.

    Returns ``(reciprocal_rank, hit@1, hit@5, hit@10)``.
    """
    s = np.asarray(scores, dtype=np.float64)
    if not 0 <= true_index < len(s):
        raise IndexError(f"true index {true_index} outside {len(s)} candidates")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite candidate score")
    ids = np.arange(len(s)) if ids is None else np.asarray(ids)
    st = s[true_index]
    rank = 1 + int((s > st).sum()) + int(((s == st) & (ids < ids[true_index])).sum())
    return 1.0 / rank, rank <= 1, rank <= 5, rank <= 10


def _ranks(scores: np.ndarray, true_idx: np.ndarray, ids: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite candidate score")
    st = scores[np.arange(len(true_idx)), true_idx][:, None]
    tid = ids[true_idx][:, None]
    return 1 + (scores > st).sum(1) + ((scores == st) & (ids[None, :] < tid)).sum(1)


def format_row(mrr: float, hits10: float, hits5: float, hits1: float) -> str:
    return f"MRR {mrr:.3f}, Hits@10 {hits10:.3f}, Hits@5 {hits5:.3f}, Hits@1 {hits1:.3f}"


@dataclass
class EvalReport:
    per_relation: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: list[dict], meta: dict | None = None) -> "EvalReport":
        scored = [r for r in rows if r["n_queries"] > 0]
        agg = {m: (float(np.mean([r[m] for r in scored])) if scored else 0.0) for m in METRICS}
        agg["n_relations"] = len(scored)
        return cls(rows, agg, dict(meta or {}))

    def summary(self) -> str:
        a = self.aggregate
        return format_row(a["mrr"], a["hits10"], a["hits5"], a["hits1"])

    def to_dict(self) -> dict:
        return {"per_relation": self.per_relation, "aggregate": self.aggregate, "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["relation", "K", *METRICS, "n_queries"]
        extra = sorted({k for r in self.per_relation for k in r} - set(cols))
        w = csv.DictWriter(buf, fieldnames=cols + extra, lineterminator="\n")
        w.writeheader()
        for r in self.per_relation:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


def evaluate_task(state: ModelState, task: FewShotTask, graph: KnowledgeGraph | None = None, seed: int = 0,
                  max_queries: int | None = None) -> dict:
    """Per-relation metrics for one task; queries are ranked against ``task.candidates``."""
    tseed = int(stream(seed, "eval", task.relation).integers(2**62))
    r_prime = adapt(state, task, graph, tseed)
    q = task.queries if max_queries is None else task.queries[:max_queries]
    cands = task.candidates
    row = {"relation": task.relation, "K": task.k, "n_queries": int(len(q))}
    if len(q) == 0:
        row.update({m: 0.0 for m in METRICS})
        return row
    scores = score_candidates(state, task, r_prime, graph, tseed, heads=q[:, 0])
    true_idx = np.searchsorted(cands, q[:, 1])
    if np.any(true_idx >= len(cands)) or np.any(cands[np.minimum(true_idx, len(cands) - 1)] != q[:, 1]):
        raise ValueError(f"task {task.relation!r}: a query's true tail is missing from the candidates")
    ranks = _ranks(scores, true_idx, cands)
    row.update({
        "mrr": float(np.mean(1.0 / ranks)),
        "hits1": float(np.mean(ranks <= 1)),
        "hits5": float(np.mean(ranks <= 5)),
        "hits10": float(np.mean(ranks <= 10)),
    })
    return row


def evaluate(state: ModelState, tasks: Sequence[FewShotTask], graph: KnowledgeGraph | None = None,
             seed: int = 0, max_queries: int | None = None, meta: dict | None = None) -> EvalReport:
    """Macro-averaged ranking metrics over tasks (unweighted mean over relations)."""
    rows = [evaluate_task(state, t, graph, seed, max_queries) for t in tasks]
    m = {"variant": state.variant, "seed": seed}
    m.update(meta or {})
    return EvalReport.from_rows(rows, m)


@dataclass
class ProbeReport:
    report: EvalReport
    by_pattern: dict[str, float]

    def to_csv(self) -> str:
        lines = ["pattern,mean_hits10,n_relations"]
        counts: dict[str, int] = {}
        for r in self.report.per_relation:
            counts[r["pattern"]] = counts.get(r["pattern"], 0) + 1
        for p in sorted(self.by_pattern):
            lines.append(f"{p},{self.by_pattern[p]!r},{counts[p]}")
        return "\n".join(lines) + "\n"


def null_tasks(synth, k: int, candidates: np.ndarray, seed: int, cap: int | None = None) -> list[FewShotTask]:
    """K-shot tasks over synthetic relations, remaining edges as queries."""
    tasks = []
    for rel in synth:
        tseed = int(stream(seed, "probe-task", rel.name).integers(2**62))
        pairs = np.asarray(rel.triples, dtype=np.int64).reshape(-1, 2)
        cands = cap_candidates(candidates, pairs[:, 1], cap, tseed)
        tasks.append(task_from_pairs(rel.name, pairs, k, ALL_REMAINING, cands, tseed))
    return tasks


def probe_null_tasks(state: ModelState, synth, k: int, seed: int, candidates: np.ndarray,
                     graph: KnowledgeGraph | None = None, cap: int | None = None,
                     max_queries: int | None = None) -> ProbeReport:
    """Evaluate on synthetic relations and average Hits@10 per generating pattern.

    ``candidates`` is normally the sorted LCC vertex set.
    """
    tasks = null_tasks(synth, k, candidates, seed, cap)
    rows = []
    for rel, task in zip(synth, tasks):
        row = evaluate_task(state, task, graph, seed, max_queries)
        row["pattern"] = rel.pattern
        rows.append(row)
    report = EvalReport.from_rows(rows, {"variant": state.variant, "seed": seed, "K": k})
    by_pattern: dict[str, list[float]] = {}
    for r in rows:
        by_pattern.setdefault(r["pattern"], []).append(r["hits10"])
    return ProbeReport(report, {p: float(np.mean(v)) for p, v in sorted(by_pattern.items())})
