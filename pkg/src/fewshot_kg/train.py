"""Episodic meta-training: sample tasks, adapt on the support, Adam on the query loss."""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .evaluate import evaluate
from .kg import Dataset, KnowledgeGraph
from .model import ModelState, task_loss
from .optim import AdamState, TrainConfig, adam_step
from .rng import stream
from .tasks import ALL_REMAINING, FewShotTask, RelationSplit, build_candidates, build_task, sample_negatives

logger = logging.getLogger(__name__)


def _seed(seed: int, *parts) -> int:
    return int(stream(seed, *parts).integers(2**62))


def config_hash(state: ModelState, cfg: TrainConfig) -> str:
    """Identity of a training run; the step horizon is excluded so resumed runs match."""
    c = asdict(cfg)
    c.pop("max_steps")
    blob = json.dumps({"variant": state.variant, "hp": asdict(state.hp), "cfg": c}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TrainData:
    """Everything a training run reads: full graph, background view, split and candidate pools."""

    dataset: Dataset
    split: RelationSplit
    train_relations: list[int] = field(default_factory=list)
    _cands: dict[int, np.ndarray] = field(default_factory=dict)
    candidate_cap: int | None = None

    @classmethod
    def build(cls, dataset: Dataset, split: RelationSplit, cfg: TrainConfig) -> "TrainData":
        rels = list(split.train)
        if cfg.train_on_background:
            rels += [r for r in dataset.background.relation_ids_present() if r not in rels]
        g = dataset.graph
        usable = [r for r in rels if len(np.unique(g.pairs(r), axis=0)) >= cfg.k_shot + 1]
        if len(usable) < len(rels):
            logger.info("skipping %d training relations with <= K triples", len(rels) - len(usable))
        return cls(dataset, split, usable, {}, cfg.candidate_cap)

    @property
    def graph(self) -> KnowledgeGraph:
        return self.dataset.graph

    @property
    def background(self) -> KnowledgeGraph:
        return self.dataset.background

    def candidates(self, relation: int) -> np.ndarray:
        c = self._cands.get(relation)
        if c is None:
            c = self._cands[relation] = build_candidates(self.graph, self.dataset.types, relation,
                                                         cap=self.candidate_cap, seed=relation)
        return c

    def tasks(self, relations, k: int, seed: int, purpose: str) -> list[FewShotTask]:
        return [build_task(self.graph, r, k, ALL_REMAINING, _seed(seed, purpose, r), candidates=self.candidates(r))
                for r in relations]


def train_step(state: ModelState, astate: AdamState, data: TrainData, cfg: TrainConfig, step: int) -> float:
    """One outer update over ``batch_tasks`` tasks drawn with replacement; returns the mean query loss."""
    if not data.train_relations:
        raise ValueError("empty training split")
    rels = data.train_relations
    picks = stream(cfg.seed, "train-step", step).integers(len(rels), size=cfg.batch_tasks)
    grads = state.zero_grads()
    scale = 1.0 / cfg.batch_tasks
    total = 0.0
    for i, ri in enumerate(picks.tolist()):
        rel = rels[ri]
        tseed = _seed(cfg.seed, "train-task", step, i)
        task = build_task(data.graph, rel, cfg.k_shot, cfg.queries_per_task, tseed, candidates=data.candidates(rel))
        qneg = sample_negatives(task, task.queries, state.hp.neg_ratio, _seed(tseed, "query-neg"),
                                known=task.known).tails
        total += task_loss(state, task, qneg, data.background, tseed, grads, scale)
    adam_step(state.params, grads, astate, cfg)
    return total * scale


def _read_log(path: Path, upto: int) -> list[dict]:
    if not path.exists():
        return []
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            if rec["step"] <= upto:
                out.append(rec)
    return out


def latest_checkpoint(out_dir: str | Path) -> Path | None:
    cks = sorted(Path(out_dir).glob("step-*.ckpt"))
    return cks[-1] if cks else None


def train_loop(state: ModelState, data: TrainData, cfg: TrainConfig, out_dir: str | Path,
               resume: str | Path | bool | None = None, meta: dict | None = None) -> tuple[ModelState, list[dict]]:
    """Run up to ``cfg.max_steps`` outer steps with periodic validation and checkpoints.

    Writes ``train_log.jsonl``, ``step-NNNNNNNN.ckpt`` every ``eval_every`` steps
    and ``best.ckpt`` (copy of the best-validation checkpoint).  ``resume=True``
    picks the latest step checkpoint in ``out_dir``.  ``meta`` is merged into
    every checkpoint header.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    chash = config_hash(state, cfg)
    astate = AdamState.for_params({k: state.params[k] for k in state.trainable()})
    start, best_mrr, best_step, bad = 0, -1.0, 0, 0
    log: list[dict] = []
    if resume:
        path = latest_checkpoint(out) if resume is True else Path(resume)
        if path is not None:
            state, astate, ck_meta = load_checkpoint(path)
            start, best_mrr, best_step, bad = (ck_meta["step"], ck_meta["best_mrr"], ck_meta["best_step"],
                                               ck_meta["bad_evals"])
            log = _read_log(log_path, start)
            logger.info("resumed from %s at step %d", path, start)
    with open(log_path, "w", encoding="utf-8") as fh:
        for rec in log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if cfg.max_steps == 0:
        return state, log

    valid_tasks = data.tasks(data.split.valid, cfg.k_shot, cfg.seed, "valid")
    for step in range(start + 1, cfg.max_steps + 1):
        t0 = time.perf_counter()
        loss = train_step(state, astate, data, cfg, step)
        rec = {"step": step, "loss": loss}
        stop = False
        if step % cfg.eval_every == 0:
            if valid_tasks:
                rep = evaluate(state, valid_tasks, data.background, seed=cfg.seed, max_queries=cfg.eval_max_queries)
                rec["val_mrr"] = rep.aggregate["mrr"]
                if rec["val_mrr"] > best_mrr:
                    best_mrr, best_step, bad = rec["val_mrr"], step, 0
                else:
                    bad += 1
                    stop = bad >= cfg.patience
            ck_meta = {"step": step, "best_mrr": best_mrr, "best_step": best_step, "bad_evals": bad,
                    "config_hash": chash, "seed": cfg.seed}
            ck_meta.update(meta or {})
            ck = save_checkpoint(out / f"step-{step:08d}.ckpt", state, astate, ck_meta)
            if best_step == step or not valid_tasks:
                shutil.copyfile(ck, out / "best.ckpt")
        rec["wall_ms"] = round(1000 * (time.perf_counter() - t0), 3)
        log.append(rec)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if stop:
            logger.info("early stop at step %d (best step %d, val MRR %.4f)", step, best_step, best_mrr)
            break
    return state, log
