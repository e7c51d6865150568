"""Seeded planted-community knowledge graphs for desk-scale experiments."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import stream


@dataclass
class PlantedKG:
    background: list[tuple[str, str, str]]
    tasks: dict[str, dict[str, list[list[str]]]]  # split -> relation -> triples
    community: dict[str, int]

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"background": out / "path_graph.tsv"}
        with open(paths["background"], "w", encoding="utf-8") as fh:
            for h, r, t in self.background:
                fh.write(f"{h}\t{r}\t{t}\n")
        for split, rels in self.tasks.items():
            paths[split] = out / f"{split}_tasks.json"
            paths[split].write_text(json.dumps(rels, sort_keys=True), encoding="utf-8")
        (out / "planted_communities.json").write_text(json.dumps(self.community, sort_keys=True), encoding="utf-8")
        return paths


def _edges(rng, comm_members, comm_of, n, count, p_intra):
    heads = rng.integers(n, size=count)
    intra = rng.random(count) < p_intra
    tails = rng.integers(n, size=count)
    for i in np.flatnonzero(intra):
        members = comm_members[comm_of[heads[i]]]
        tails[i] = members[rng.integers(len(members))]
    keep = heads != tails
    return heads[keep], tails[keep]


def planted_kg(n_entities: int = 2000, n_communities: int = 20, n_relations: int = 50,
               triples_per_relation: int = 200, p_intra: float = 0.9,
               task_relations: tuple[int, int, int] = (10, 3, 3), triples_per_task: int = 40,
               seed: int = 0) -> PlantedKG:
    """Entities split evenly into communities; relations mostly link inside a community.

    Background and task relations use the same generator, so every relation
    carries positional signal and no logical pattern.
    """
    rng = stream(seed, "planted")
    comm_of = rng.permutation(np.arange(n_entities) % n_communities)
    comm_members = [np.flatnonzero(comm_of == c) for c in range(n_communities)]
    names = [f"e{i:05d}" for i in range(n_entities)]
    background = []
    for r in range(n_relations):
        h, t = _edges(rng, comm_members, comm_of, n_entities, triples_per_relation, p_intra)
        background += [(names[a], f"bg{r:03d}", names[b]) for a, b in zip(h.tolist(), t.tolist())]
    tasks: dict[str, dict[str, list[list[str]]]] = {}
    idx = 0
    for split, count in zip(("train", "dev", "test"), task_relations):
        tasks[split] = {}
        for _ in range(count):
            rel = f"task{idx:03d}"
            idx += 1
            h, t = _edges(rng, comm_members, comm_of, n_entities, triples_per_task, p_intra)
            tasks[split][rel] = [[names[a], rel, names[b]] for a, b in zip(h.tolist(), t.tolist())]
    return PlantedKG(background, tasks, {names[i]: int(comm_of[i]) for i in range(n_entities)})
