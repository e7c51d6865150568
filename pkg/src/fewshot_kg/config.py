"""Flat run configuration: one JSON file plus ``--key=value`` overrides."""

from __future__ import annotations

import hashlib
import json
import os
import types
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .model import VARIANTS, HyperParams
from .nullmodels import PATTERNS
from .optim import TrainConfig

OUT_ENV = "FEWSHOT_KG_OUT"
PATH_KEYS = ("background", "train_tasks", "valid_tasks", "test_tasks", "pretrained", "split_file",
             "checkpoint", "null_tasks", "null_sidecar", "eval_report")
# keys that locate outputs or extend a run without changing what it computes
_HASH_EXCLUDED = ("out_dir", "resume", "max_steps")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "runs")


@dataclass
class RunConfig:
    # data
    background: str | None = None
    train_tasks: str | None = None
    valid_tasks: str | None = None
    test_tasks: str | None = None
    pretrained: str | None = None
    freeze_pretrained: bool = True
    split_file: str | None = None
    split_ratios: list[int] | None = None
    # run
    variant: str = "MetaR"
    seed: int = 0
    out_dir: str = field(default_factory=_default_out)
    resume: bool = False
    # model
    d: int = 100
    d_h: int | None = None
    eta: float = 1.0
    gamma: float = 1.0
    neg_ratio: int = 3
    norm: str = "L2"
    second_order: bool = False
    rgcn_neighbors: int = 10
    rgcn_bases: int = 2
    rgcn_hidden: int = 50
    # training
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_tasks: int = 64
    queries_per_task: int = 3
    k_shot: int = 1
    max_steps: int = 200
    eval_every: int = 50
    patience: int = 10
    early_stop_metric: str = "mrr"
    train_on_background: bool = False
    eval_max_queries: int | None = None
    candidate_cap: int | None = None
    # evaluation, probing, analysis
    checkpoint: str | None = None
    eval_split: str = "test"
    null_n: int | None = None
    null_per_pattern: int = 10
    null_tasks: str | None = None
    null_sidecar: str | None = None
    patterns: list[str] = field(default_factory=lambda: list(PATTERNS))
    probe_k: int = 1
    probe_cap: int | None = None
    eval_report: str | None = None
    correlation_unit: str = "relation"
    top: int = 100

    def hyperparams(self) -> HyperParams:
        return HyperParams(**{f.name: getattr(self, f.name) for f in fields(HyperParams)})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{f.name: getattr(self, f.name) for f in fields(TrainConfig)})

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _HASH_EXCLUDED}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def path(self, key: str, default: str) -> Path:
        v = getattr(self, key)
        return Path(v) if v is not None else Path(self.out_dir) / default

    def problems(self) -> list[str]:
        """Every violation, so a bad config is fixed in one round."""
        out = []
        for key in PATH_KEYS:
            v = getattr(self, key)
            if v is not None and not Path(v).exists():
                out.append(f"{key}: no such file {v!r}")
        if self.variant not in VARIANTS:
            out.append(f"variant: must be one of {', '.join(VARIANTS)}")
        if self.seed < 0:
            out.append("seed: must be >= 0")
        for validate in (self.hyperparams().validate, self.train_config().validate):
            try:
                validate()
            except ValueError as e:
                out += str(e).split("; ")
        if self.split_ratios is not None and (len(self.split_ratios) != 3 or min(self.split_ratios) < 0):
            out.append("split_ratios: expected three non-negative counts train,valid,test")
        if self.eval_split not in ("train", "valid", "test"):
            out.append("eval_split: must be train, valid or test")
        for p in self.patterns:
            if p not in PATTERNS:
                out.append(f"patterns: unknown pattern {p!r}")
        if self.null_n is not None and self.null_n < 1:
            out.append("null_n: must be >= 1")
        if self.null_per_pattern < 1:
            out.append("null_per_pattern: must be >= 1")
        if self.probe_k < 0:
            out.append("probe_k: must be >= 0")
        if self.correlation_unit not in ("relation", "entity"):
            out.append("correlation_unit: must be relation or entity")
        if self.top < 1:
            out.append("top: must be >= 1")
        return out

    def validate(self) -> "RunConfig":
        p = self.problems()
        if p:
            raise ConfigError(p)
        return self


_FIELDS = {f.name: f for f in fields(RunConfig)}
_HINTS = typing.get_type_hints(RunConfig)


def field_kind(name: str) -> tuple[type, bool, bool]:
    """(scalar type, optional, is_list) for a config key."""
    hint = _HINTS[name]
    args = typing.get_args(hint)
    optional = type(None) in args
    if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union:
        hint = next(a for a in args if a is not type(None))
    if typing.get_origin(hint) is list:
        return typing.get_args(hint)[0], optional, True
    return hint, optional, False


def _coerce_scalar(tp: type, v, key: str):
    if tp is bool:
        if isinstance(v, bool):
            return v
        if isinstance(v, str) and v.lower() in ("true", "1", "yes", "false", "0", "no"):
            return v.lower() in ("true", "1", "yes")
        raise ValueError(f"{key}: expected a boolean, got {v!r}")
    if tp is int:
        if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
            raise ValueError(f"{key}: expected an integer, got {v!r}")
        try:
            return int(v)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: expected an integer, got {v!r}") from None
    if tp is float:
        if isinstance(v, bool):
            raise ValueError(f"{key}: expected a number, got {v!r}")
        try:
            return float(v)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: expected a number, got {v!r}") from None
    if not isinstance(v, str):
        raise ValueError(f"{key}: expected a string, got {v!r}")
    return v


def coerce(key: str, v):
    """Convert a JSON value or command-line string to the key's type."""
    tp, optional, is_list = field_kind(key)
    if v is None or (isinstance(v, str) and v.lower() in ("none", "null")):
        if optional:
            return None
        raise ValueError(f"{key}: may not be null")
    if is_list:
        items = v.split(",") if isinstance(v, str) else v
        if not isinstance(items, list):
            raise ValueError(f"{key}: expected a list, got {v!r}")
        return [_coerce_scalar(tp, x.strip() if isinstance(x, str) else x, key) for x in items]
    return _coerce_scalar(tp, v, key)


def build_config(base: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, a config mapping and overrides; every bad key or value is reported together."""
    problems, values = [], {}
    for source in (base or {}, overrides or {}):
        for k, v in source.items():
            if k not in _FIELDS:
                problems.append(f"{k}: unknown key")
                continue
            try:
                values[k] = coerce(k, v)
            except ValueError as e:
                problems.append(str(e))
    cfg = RunConfig(**values)
    problems += cfg.problems()
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    base = {}
    if path is not None:
        try:
            base = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError([f"config: no such file {str(path)!r}"]) from None
        except json.JSONDecodeError as e:
            raise ConfigError([f"config: invalid JSON at line {e.lineno}: {e.msg}"]) from None
        if not isinstance(base, dict):
            raise ConfigError(["config: top level must be a JSON object"])
    return build_config(base, overrides)
