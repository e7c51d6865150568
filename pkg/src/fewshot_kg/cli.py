"""Command-line driver.

Every subcommand reads the same flat configuration (``--config run.json``
plus ``--key=value`` overrides) and writes its artifacts under ``out_dir``.
Failures exit nonzero with one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import MISSING, fields
from pathlib import Path

import numpy as np

from .analysis import correlation_points, entity_correlation_points, min_witness_k, pearson, witness_check
from .checkpoint import load_checkpoint
from .config import OUT_ENV, ConfigError, RunConfig, field_kind, load_config
from .evaluate import EvalReport, evaluate, probe_null_tasks
from .kg import Dataset, degree_stats, largest_connected_component, load_dataset
from .louvain import louvain
from .model import init_state, load_pretrained_embeddings
from .nullmodels import generate_null_relations, read_null_relations, write_null_relations
from .synthkg import planted_kg
from .tasks import RelationSplit, split_relations, validate_split
from .train import TrainData, train_loop

logger = logging.getLogger("fewshot_kg")

SPLIT_FILES = {"train": "train_tasks", "valid": "valid_tasks", "test": "test_tasks"}


class UsageError(ValueError):
    pass


def _digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _stamp(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.hash(), "seed": cfg.seed}


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _write_json(path: Path, obj) -> Path:
    return _write(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _write_csv(path: Path, cfg: RunConfig, body: str) -> Path:
    # provenance rides on a comment line; read with comment="#"
    return _write(path, f"# config_hash={cfg.hash()} seed={cfg.seed}\n{body}")


def _dataset(cfg: RunConfig) -> Dataset:
    if cfg.background is None:
        raise UsageError("background: required for this subcommand")
    files = {split: getattr(cfg, key) for split, key in SPLIT_FILES.items() if getattr(cfg, key) is not None}
    return load_dataset(cfg.background, files)


def _split(cfg: RunConfig, ds: Dataset) -> RelationSplit:
    rels = ds.all_task_relations
    if cfg.split_file is not None:
        d = json.loads(Path(cfg.split_file).read_text(encoding="utf-8"))
        names = ds.graph.relations
        try:
            split = RelationSplit(*[[names.id(n) for n in d[k]] for k in ("train", "valid", "test")])
        except KeyError as e:
            raise UsageError(f"split_file: unknown relation or missing key {e}") from None
        validate_split(split, rels)
        return split
    if cfg.split_ratios is not None:
        return split_relations(sorted(rels), tuple(cfg.split_ratios), cfg.seed)
    return RelationSplit(*[list(ds.task_relations.get(s, [])) for s in ("train", "valid", "test")])


def _checkpoint(cfg: RunConfig):
    path = cfg.path("checkpoint", "train/best.ckpt")
    if not path.exists():
        raise UsageError(f"checkpoint: no such file {str(path)!r}")
    state, _, _ = load_checkpoint(path)
    return state, path


def _eval_tasks(cfg: RunConfig, ds: Dataset, split: RelationSplit):
    data = TrainData.build(ds, split, cfg.train_config())
    rels = getattr(split, cfg.eval_split)
    if not rels:
        raise UsageError(f"eval_split: the {cfg.eval_split} split has no relations")
    return data.tasks(rels, cfg.k_shot, cfg.seed, "eval")


def cmd_ingest(cfg: RunConfig, args) -> int:
    ds = _dataset(cfg)
    g = ds.graph
    out = {
        "entities": g.n_entities,
        "relations": g.n_relations,
        "triples": len(g.triples),
        "duplicates_dropped": g.duplicates_dropped,
        "background_triples": len(ds.background.triples),
        "task_relations": {s: len(r) for s, r in ds.task_relations.items()},
        **_stamp(cfg),
    }
    _write_json(Path(cfg.out_dir) / "ingest.json", out)
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_split(cfg: RunConfig, args) -> int:
    ds = _dataset(cfg)
    split = _split(cfg, ds)
    out = {**split.to_dict(ds.graph.relations.names), **_stamp(cfg)}
    path = _write_json(Path(cfg.out_dir) / "split.json", out)
    print(f"train {len(split.train)} valid {len(split.valid)} test {len(split.test)} -> {path}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    ds = _dataset(cfg)
    split = _split(cfg, ds)
    tcfg = cfg.train_config()
    data = TrainData.build(ds, split, tcfg)
    if not data.train_relations:
        raise UsageError("empty training split")
    state = init_state(cfg.variant, ds.graph.n_entities, ds.graph.n_relations, cfg.hyperparams(), cfg.seed)
    if cfg.pretrained is not None:
        load_pretrained_embeddings(cfg.pretrained, state, ds.graph.entities, freeze=cfg.freeze_pretrained)
    out = Path(cfg.out_dir) / "train"
    _write_json(out / "run.json", {"config": cfg.to_dict(), **_stamp(cfg)})
    _, log = train_loop(state, data, tcfg, out, resume=cfg.resume or None, meta={"run_config_hash": cfg.hash()})
    last = log[-1] if log else {}
    print(f"trained {cfg.variant} for {last.get('step', 0)} steps, final loss {last.get('loss', float('nan')):.4f}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    ds = _dataset(cfg)
    state, ck = _checkpoint(cfg)
    tasks = _eval_tasks(cfg, ds, _split(cfg, ds))
    meta = {"dataset": _digest(cfg.background), "checkpoint": _digest(ck), "split": cfg.eval_split, **_stamp(cfg)}
    rep = evaluate(state, tasks, ds.background, seed=cfg.seed, max_queries=cfg.eval_max_queries, meta=meta)
    out = Path(cfg.out_dir)
    _write(out / "eval.json", rep.to_json() + "\n")
    _write_csv(out / "eval.csv", cfg, rep.to_csv())
    print(rep.summary())
    return 0


def _null_n(cfg: RunConfig, ds: Dataset, split: RelationSplit) -> int:
    if cfg.null_n is not None:
        return cfg.null_n
    counts = [len(np.unique(ds.graph.pairs(r), axis=0)) for r in split.test]
    if not counts:
        raise UsageError("null_n: not set and there are no test relations to take the median from")
    return max(1, int(np.median(counts)))


def cmd_gen_null(cfg: RunConfig, args) -> int:
    ds = _dataset(cfg)
    n = _null_n(cfg, ds, _split(cfg, ds))
    lcc = largest_connected_component(ds.background)
    if not lcc:
        raise UsageError("background graph has no edges")
    part = louvain(ds.background, lcc)
    rels = generate_null_relations(lcc, part, n, cfg.null_per_pattern, cfg.seed, cfg.patterns)
    out = Path(cfg.out_dir) / "null"
    out.mkdir(parents=True, exist_ok=True)
    extra = {"N": n, "lcc_size": len(lcc), "communities": len(part.communities), "modularity": part.modularity,
             **_stamp(cfg)}
    write_null_relations(rels, ds.graph.entities.names, out / "null_tasks.json", out / "null_sidecar.json", extra)
    names = ds.graph.entities.names
    part_dump = {"assignment": {names[e]: c for e, c in sorted(part.assignment.items())},
                 "modularity": part.modularity, **_stamp(cfg)}
    _write_json(out / "partition.json", part_dump)
    print(f"{len(rels)} null relations (N={n}) over an LCC of {len(lcc)} entities, "
          f"{len(part.communities)} communities, Q={part.modularity:.4f}")
    return 0


def cmd_probe(cfg: RunConfig, args) -> int:
    ds = _dataset(cfg)
    state, ck = _checkpoint(cfg)
    synth = read_null_relations(cfg.path("null_tasks", "null/null_tasks.json"),
                                cfg.path("null_sidecar", "null/null_sidecar.json"), ds.graph.entities)
    synth = [s for s in synth if s.pattern in cfg.patterns]
    if not synth:
        raise UsageError(f"patterns: no null relations of pattern(s) {', '.join(cfg.patterns)}")
    cands = np.array(sorted(largest_connected_component(ds.background)), dtype=np.int64)
    rep = probe_null_tasks(state, synth, cfg.probe_k, cfg.seed, cands, ds.background, cap=cfg.probe_cap,
                           max_queries=cfg.eval_max_queries)
    rep.report.meta.update({"dataset": _digest(cfg.background), "checkpoint": _digest(ck), **_stamp(cfg)})
    out = Path(cfg.out_dir)
    stem = f"probe_k{cfg.probe_k}"
    _write_csv(out / f"{stem}.csv", cfg, rep.to_csv())
    _write_csv(out / f"{stem}_relations.csv", cfg, rep.report.to_csv())
    _write(out / f"{stem}.json", json.dumps({"by_pattern": rep.by_pattern, **rep.report.to_dict()},
                                           sort_keys=True, indent=1) + "\n")
    for p, v in rep.by_pattern.items():
        print(f"{p}\tHits@10 {v:.4f}")
    return 0


def cmd_analyze(cfg: RunConfig, args) -> int:
    ds = _dataset(cfg)
    report_path = cfg.path("eval_report", "eval.json")
    if not report_path.exists():
        raise UsageError(f"eval_report: no such file {str(report_path)!r}")
    rep = EvalReport(**json.loads(report_path.read_text(encoding="utf-8")))
    tasks = _eval_tasks(cfg, ds, _split(cfg, ds))
    fn = correlation_points if cfg.correlation_unit == "relation" else entity_correlation_points
    pts = fn(ds.background, tasks, rep.per_relation)
    r = pearson([p.x for p in pts], [p.y for p in pts])
    out = Path(cfg.out_dir)
    body = "relation,x,y\n" + "".join(f"{p.relation},{p.x!r},{p.y!r}\n" for p in pts)
    _write_csv(out / "correlation.csv", cfg, body)
    _write_json(out / "correlation.json", {"r": r, "n": len(pts), "unit": cfg.correlation_unit, **_stamp(cfg)})
    print(f"pearson r = {r:.4f} over {len(pts)} points")
    return 0


def cmd_stats(cfg: RunConfig, args) -> int:
    ds = _dataset(cfg)
    g = ds.background
    st = degree_stats(g, cfg.top)
    out = Path(cfg.out_dir)
    _write_json(out / "stats.json", {**st.to_dict(g), **_stamp(cfg)})
    names = g.entities.names
    _write_csv(out / "top_degree.csv", cfg,
               "rank,entity,degree\n" + "".join(f"{i + 1},{names[e]},{d}\n" for i, (e, d) in enumerate(st.top_k)))
    vals, counts = np.unique(g.degree_index, return_counts=True)
    _write_csv(out / "degree_distribution.csv", cfg,
               "degree,count\n" + "".join(f"{v},{c}\n" for v, c in zip(vals.tolist(), counts.tolist())))
    print(f"top entity degree {st.max_degree:,} ({names[st.max_degree_entity]}), median {st.median_degree}")
    return 0


def cmd_witness(cfg: RunConfig, args) -> int:
    need = min_witness_k(args.pattern)
    if args.support is not None:
        support = [tuple(e) for e in json.loads(args.support)]
        v = witness_check(support, args.pattern)
        print(json.dumps({"pattern": v.pattern, "witnessed": v.witnessed,
                          "witnessing_triples": [list(e) for e in v.witnessing_triples]}))
        return 0
    print(f"{'witnessable' if args.k >= need else 'not witnessable'} (min K = {need})")
    return 0


def cmd_synth_kg(cfg: RunConfig, args) -> int:
    kg = planted_kg(n_entities=args.entities, n_communities=args.communities, n_relations=args.relations,
                    triples_per_relation=args.triples_per_relation, p_intra=args.p_intra,
                    task_relations=tuple(args.task_relations), triples_per_task=args.triples_per_task,
                    seed=cfg.seed)
    out = Path(cfg.out_dir)
    paths = kg.write(out)
    conf = {"background": str(paths["background"]), "train_tasks": str(paths["train"]),
            "valid_tasks": str(paths["dev"]), "test_tasks": str(paths["test"]), "seed": cfg.seed}
    _write_json(out / "config.json", conf)
    print(f"wrote planted graph to {out}; dataset config in {out / 'config.json'}")
    return 0


COMMANDS = {
    "ingest": (cmd_ingest, "parse the background TSV and task files, report counts"),
    "split": (cmd_split, "write the train/valid/test relation split"),
    "train": (cmd_train, "episodic meta-training with periodic validation and checkpoints"),
    "eval": (cmd_eval, "rank query candidates and write MRR / Hits@K reports"),
    "gen-null": (cmd_gen_null, "Louvain communities and synthetic null relations"),
    "probe": (cmd_probe, "evaluate a checkpoint on null relations, Hits@10 per pattern"),
    "analyze": (cmd_analyze, "correlate relation MRR with support-entity log degree"),
    "stats": (cmd_stats, "degree statistics and plot data"),
    "witness": (cmd_witness, "minimum support size that can exhibit a logical pattern"),
    "synth-kg": (cmd_synth_kg, "write a seeded planted-community graph and its dataset config"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("configuration (each overrides the same key in --config)")
    g.add_argument("--config", default=None, help="JSON run configuration")
    for f in fields(RunConfig):
        tp, optional, is_list = field_kind(f.name)
        kind = ("comma-separated " if is_list else "") + tp.__name__ + (" or none" if optional else "")
        default = f.default_factory() if f.default_factory is not MISSING else f.default
        if f.name == "out_dir":
            default = f"${OUT_ENV} or runs"
        g.add_argument(f"--{f.name}", dest=f.name, metavar=kind.upper().replace(" ", "_"),
                       help=f"default: {default}")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _config_flags()
    parser = _Parser(prog="fewshot-kg", description="Few-shot knowledge graph link prediction experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        if name == "probe":
            sp.add_argument("--pattern", action="append", dest="pattern_filter", default=None,
                            help="restrict to one pattern (repeatable); same as --patterns")
            sp.add_argument("--k", type=int, dest="k_override", default=None, help="support size; same as --probe_k")
        elif name == "witness":
            sp.add_argument("--pattern", required=True, help="symmetry or transitivity")
            sp.add_argument("--k", type=int, default=None, help="support size to test")
            sp.add_argument("--support", default=None, help='JSON list of pairs to check, e.g. [["a","b"],["b","a"]]')
        elif name == "synth-kg":
            sp.add_argument("--entities", type=int, default=2000)
            sp.add_argument("--communities", type=int, default=20)
            sp.add_argument("--relations", type=int, default=50)
            sp.add_argument("--triples-per-relation", type=int, default=200)
            sp.add_argument("--p-intra", type=float, default=0.9)
            sp.add_argument("--task-relations", type=int, nargs=3, default=[10, 3, 3], metavar=("TRAIN", "VALID", "TEST"))
            sp.add_argument("--triples-per-task", type=int, default=40)
    return parser


def _overrides(args) -> dict:
    keys = {f.name for f in fields(RunConfig)}
    over = {k: v for k, v in vars(args).items() if k in keys}
    if getattr(args, "pattern_filter", None):
        over["patterns"] = ",".join(args.pattern_filter)
    if getattr(args, "k_override", None) is not None:
        over["probe_k"] = args.k_override
    return over


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return _fail("UsageError", str(e), 2)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        if args.command == "witness" and args.k is None and args.support is None:
            raise UsageError("witness: give --k or --support")
        cfg = load_config(getattr(args, "config", None), _overrides(args))
        return COMMANDS[args.command][0](cfg, args)
    except ConfigError as e:
        return _fail("ConfigError", str(e), 2)
    except UsageError as e:
        return _fail("UsageError", str(e), 2)
    except (ValueError, KeyError, OSError, FloatingPointError) as e:
        return _fail(type(e).__name__, str(e).replace("\n", " "), 1)


if __name__ == "__main__":
    sys.exit(main())
