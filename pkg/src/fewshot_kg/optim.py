"""Bias-corrected Adam over named parameter groups."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class TrainConfig:
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
    seed: int = 0
    early_stop_metric: str = "mrr"
    train_on_background: bool = False
    eval_max_queries: int | None = None
    candidate_cap: int | None = None

    def validate(self) -> None:
        errors = []
        if self.lr <= 0:
            errors.append("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            errors.append("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            errors.append("epsilon must be > 0")
        if self.batch_tasks < 1:
            errors.append("batch_tasks must be >= 1")
        if self.queries_per_task < 1:
            errors.append("queries_per_task must be >= 1")
        if self.k_shot < 0:
            errors.append("k_shot must be >= 0")
        if self.max_steps < 0:
            errors.append("max_steps must be >= 0")
        if self.eval_every < 1:
            errors.append("eval_every must be >= 1")
        if self.early_stop_metric != "mrr":
            errors.append("early_stop_metric must be 'mrr'")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], astate: AdamState,
              cfg: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """In-place Adam update of every group present in ``grads``.

    Groups missing from ``grads`` (frozen ones) are left untouched.  Raises
    before touching anything if a gradient entry is NaN or infinite.
    """
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k!r} {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter group {k!r}")
    astate.t += 1
    bc1 = 1.0 - cfg.beta1 ** astate.t
    bc2 = 1.0 - cfg.beta2 ** astate.t
    for k, g in grads.items():
        m = astate.m.setdefault(k, np.zeros_like(params[k]))
        v = astate.v.setdefault(k, np.zeros_like(params[k]))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        params[k] -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
    return params, astate
