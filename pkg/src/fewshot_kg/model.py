"""Meta-learned TransE model family with analytic gradients.

Four variants share one pipeline: encode entities, derive a relation vector
from the support set, refine it with one gradient step on the support margin
loss, then score query tails with a TransE decoder.

    MetaR        r = mean_k MLP([E(h_k); E(t_k)]), then the support step
    SharedEmbed  r = r_g (one learned vector), then the support step
    ZeroShot     r' = r_g, no support step
    RGCN         MetaR over two-layer R-GCN entity encodings

Gradients are derived by hand; ``tests/test_gradients.py`` checks every group
against central finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rgcn
from .kg import KnowledgeGraph, Vocab
from .rng import stream
from .tasks import FewShotTask, sample_negatives

logger = logging.getLogger(__name__)

VARIANTS = ("MetaR", "SharedEmbed", "ZeroShot", "RGCN")
NORMS = ("L1", "L2")
MLP_KEYS = ("mlp.W1", "mlp.b1", "mlp.W2", "mlp.b2")

GradientBundle = dict  # parameter-group name -> gradient array, same shapes as ModelState.params


@dataclass
class HyperParams:
    d: int = 100
    d_h: int | None = None  # defaults to the working width
    eta: float = 1.0
    gamma: float = 1.0
    neg_ratio: int = 3
    norm: str = "L2"
    second_order: bool = False
    rgcn_neighbors: int = 10
    rgcn_bases: int = 2
    rgcn_hidden: int = 50

    def validate(self) -> None:
        errors = []
        if self.d < 1:
            errors.append("d must be >= 1")
        if self.eta < 0:
            errors.append("eta must be >= 0")
        if self.gamma <= 0:
            errors.append("gamma must be > 0")
        if self.neg_ratio < 1:
            errors.append("neg_ratio must be >= 1")
        if self.norm not in NORMS:
            errors.append(f"norm must be one of {NORMS}")
        if self.rgcn_neighbors < 1 or self.rgcn_bases < 1 or self.rgcn_hidden < 1:
            errors.append("rgcn sizes must be >= 1")
        if errors:
            raise ValueError("; ".join(errors))

    def width(self, variant: str) -> int:
        """Dimension of the space where TransE scoring happens."""
        return self.rgcn_hidden if variant == "RGCN" else self.d

    def hidden(self, variant: str) -> int:
        return self.d_h if self.d_h is not None else self.width(variant)


@dataclass
class ModelState:
    variant: str
    hp: HyperParams
    params: dict[str, np.ndarray]
    n_relations: int = 0
    frozen: set[str] = field(default_factory=set)

    @property
    def entity_embeddings(self) -> np.ndarray:
        return self.params["entity"]

    @property
    def rel_mlp(self) -> dict[str, np.ndarray] | None:
        if "mlp.W1" not in self.params:
            return None
        return {k.split(".")[1]: self.params[k] for k in MLP_KEYS}

    @property
    def shared_relation(self) -> np.ndarray | None:
        return self.params.get("r_g")

    @property
    def rgcn(self) -> dict[str, np.ndarray] | None:
        sub = {k: v for k, v in self.params.items() if k.startswith("rgcn.")}
        return sub or None

    @property
    def frozen_entities(self) -> bool:
        return "entity" in self.frozen

    def trainable(self) -> list[str]:
        return [k for k in self.params if k not in self.frozen]

    def zero_grads(self) -> GradientBundle:
        return {k: np.zeros_like(self.params[k]) for k in self.trainable()}

    def copy(self) -> "ModelState":
        return ModelState(self.variant, HyperParams(**asdict(self.hp)),
                          {k: v.copy() for k, v in self.params.items()}, self.n_relations, set(self.frozen))


def init_state(variant: str, n_entities: int, n_relations: int, hp: HyperParams, seed: int) -> ModelState:
    """Seeded uniform init.

    Embeddings, the shared relation vector and R-GCN weights draw from
    [-6/sqrt(d), 6/sqrt(d)].  MLP weights use the Glorot bound
    sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    hp.validate()
    rng = stream(seed, "init")
    bound = 6.0 / np.sqrt(hp.d)
    D = hp.width(variant)
    dh = hp.hidden(variant)
    params = {"entity": rng.uniform(-bound, bound, (n_entities, hp.d))}
    if variant in ("MetaR", "RGCN"):
        b1 = np.sqrt(6.0 / (2 * D + dh))
        b2 = np.sqrt(6.0 / (dh + D))
        params["mlp.W1"] = rng.uniform(-b1, b1, (2 * D, dh))
        params["mlp.b1"] = np.zeros(dh)
        params["mlp.W2"] = rng.uniform(-b2, b2, (dh, D))
        params["mlp.b2"] = np.zeros(D)
    else:
        params["r_g"] = rng.uniform(-bound, bound, D)
    if variant == "RGCN":
        params.update(rgcn.init_params(rng, hp.d, hp.rgcn_hidden, hp.rgcn_bases, n_relations, bound))
    return ModelState(variant, hp, params, n_relations)


# ---------------------------------------------------------------- encoders

def encode_entity_lookup(state: ModelState, e: int) -> np.ndarray:
    E = state.params["entity"]
    if not 0 <= e < len(E):
        raise IndexError(f"entity id {e} out of range [0, {len(E)})")
    return E[e]


def encode_entity_rgcn(state: ModelState, g: KnowledgeGraph, e: int, seed: int = 0) -> np.ndarray:
    if state.variant != "RGCN" or state.rgcn is None:
        raise ValueError("R-GCN encoding needs an RGCN-variant state")
    return rgcn.RGCNEncoding(state.params, g, np.array([e]), state.hp.rgcn_neighbors, seed).output[0]


class Encoding:
    """Encoded rows for a set of entity ids plus the matching backward pass."""

    def __init__(self, state: ModelState, ids: np.ndarray, graph: KnowledgeGraph | None, seed: int):
        self.ids = np.unique(np.asarray(ids, dtype=np.int64))
        self._row = {e: i for i, e in enumerate(self.ids.tolist())}
        if state.variant == "RGCN":
            if graph is None:
                raise ValueError("the RGCN variant needs the background graph")
            self._rgcn = rgcn.RGCNEncoding(state.params, graph, self.ids, state.hp.rgcn_neighbors, seed)
            self.X = self._rgcn.output
        else:
            E = state.params["entity"]
            if len(self.ids) and (self.ids[0] < 0 or self.ids[-1] >= len(E)):
                raise IndexError("entity id out of range")
            self._rgcn = None
            self.X = E[self.ids]

    def rows(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        return np.vectorize(self._row.__getitem__, otypes=[np.int64])(ids) if ids.size else ids.astype(np.int64)

    def backward(self, dX: np.ndarray, grads: GradientBundle, scale: float = 1.0) -> None:
        if self._rgcn is not None:
            self._rgcn.backward(dX, grads, scale)
        elif "entity" in grads:
            np.add.at(grads["entity"], self.ids, scale * dX)


# ---------------------------------------------------------------- relation learner

def mlp_forward(params: dict[str, np.ndarray], H: np.ndarray, T: np.ndarray):
    """Mean over the support of a rectified 2-layer MLP on ``[h; t]``."""
    Z = np.concatenate([H, T], axis=1)
    pre = Z @ params["mlp.W1"] + params["mlp.b1"]
    A = np.maximum(pre, 0.0)
    out = A @ params["mlp.W2"] + params["mlp.b2"]
    return out.mean(axis=0), (Z, pre, A)


def mlp_backward(params, cache, dr: np.ndarray, grads: GradientBundle | None, scale: float = 1.0):
    """Returns gradients w.r.t. the support heads and tails; parameter grads go into ``grads``."""
    Z, pre, A = cache
    K = len(Z)
    dout = np.broadcast_to(dr / K, (K, len(dr)))
    dA = dout @ params["mlp.W2"].T
    dpre = dA * (pre > 0)
    dZ = dpre @ params["mlp.W1"].T
    if grads is not None:
        for name, g in (("mlp.W2", A.T @ dout), ("mlp.b2", dr), ("mlp.W1", Z.T @ dpre), ("mlp.b1", dpre.sum(0))):
            if name in grads:
                grads[name] += scale * g
    D = Z.shape[1] // 2
    return dZ[:, :D], dZ[:, D:]


def rel_learner_mlp(state: ModelState, support_embeds) -> np.ndarray:
    """Relation vector from ``K`` (head-vector, tail-vector) pairs."""
    if state.rel_mlp is None:
        raise ValueError(f"variant {state.variant} has no relation MLP")
    pairs = list(support_embeds)
    if not pairs:
        raise ValueError("empty support set")
    H = np.array([p[0] for p in pairs], dtype=np.float64)
    T = np.array([p[1] for p in pairs], dtype=np.float64)
    return mlp_forward(state.params, H, T)[0]


# ---------------------------------------------------------------- TransE + loss

def _norm_and_grad(X: np.ndarray, norm: str):
    """Row-wise norm of the last axis and its gradient (zero at the origin)."""
    if norm == "L1":
        return np.abs(X).sum(-1), np.sign(X)
    if norm == "L2":
        d = np.sqrt((X * X).sum(-1))
        safe = np.where(d > 0, d, 1.0)
        return d, np.where(d[..., None] > 0, X / safe[..., None], 0.0)
    raise ValueError(f"unknown norm {norm!r}")


def transe_distance(h, r, t, norm: str = "L2") -> float:
    h, r, t = (np.asarray(v, dtype=np.float64) for v in (h, r, t))
    if not h.shape == r.shape == t.shape:
        raise ValueError(f"length mismatch: {h.shape}, {r.shape}, {t.shape}")
    return float(_norm_and_grad(h + r - t, norm)[0])


def margin_loss(pos_dists, neg_dists, gamma: float):
    """Mean hinge ``max(0, gamma + d_pos - d_neg)`` over (positive, negative) pairs.

    ``neg_dists`` has shape ``(P, n)``.  Returns the loss and its gradients
    with respect to ``pos_dists`` and ``neg_dists``.
    """
    pos = np.asarray(pos_dists, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg_dists, dtype=np.float64).reshape(len(pos), -1)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("margin loss needs at least one (positive, negative) pair")
    viol = gamma + pos[:, None] - neg
    active = (viol > 0).astype(np.float64)
    n_pairs = neg.size
    loss = float(np.maximum(viol, 0.0).sum() / n_pairs)
    dneg = -active / n_pairs
    return loss, -dneg.sum(1), dneg


@dataclass
class TranseTerms:
    """Margin loss over ``h + r - t`` with tail corruptions; everything needed for gradients."""

    loss: float
    u_pos: np.ndarray  # (P, D) gradient of each positive distance w.r.t. its residual
    u_neg: np.ndarray  # (P, n, D)
    c_pos: np.ndarray  # (P,) dloss/d d_pos
    c_neg: np.ndarray  # (P, n)
    d_pos: np.ndarray
    d_neg: np.ndarray

    def grad_r(self) -> np.ndarray:
        return (self.c_pos[:, None] * self.u_pos).sum(0) + (self.c_neg[..., None] * self.u_neg).sum((0, 1))

    def grad_inputs(self):
        """Gradients w.r.t. heads (P, D), true tails (P, D) and corrupted tails (P, n, D)."""
        gp = self.c_pos[:, None] * self.u_pos
        gn = self.c_neg[..., None] * self.u_neg
        return gp + gn.sum(1), -gp, -gn

    def hvp_terms(self, v: np.ndarray, norm: str):
        """Per-residual ``c * d(u . v)/dx`` for the L2 norm (zero for L1)."""
        if norm == "L1":
            return np.zeros_like(self.u_pos), np.zeros_like(self.u_neg)

        def term(u, d, c):
            safe = np.where(d > 0, d, 1.0)[..., None]
            w = (v - u * (u @ v)[..., None]) / safe
            return np.where(d[..., None] > 0, c[..., None] * w, 0.0)

        return term(self.u_pos, self.d_pos, self.c_pos), term(self.u_neg, self.d_neg, self.c_neg)


def transe_terms(H: np.ndarray, r: np.ndarray, T: np.ndarray, Tn: np.ndarray, gamma: float,
                 norm: str) -> TranseTerms:
    d_pos, u_pos = _norm_and_grad(H + r - T, norm)
    d_neg, u_neg = _norm_and_grad(H[:, None, :] + r - Tn, norm)
    loss, c_pos, c_neg = margin_loss(d_pos, d_neg, gamma)
    return TranseTerms(loss, u_pos, u_neg, c_pos, c_neg, d_pos, d_neg)


# ---------------------------------------------------------------- task pipeline

def _sub_seed(seed: int, *parts) -> int:
    return int(stream(seed, *parts).integers(2**62))


def support_negatives(state: ModelState, task: FewShotTask, seed: int) -> np.ndarray:
    """Corrupted support tails ``(K, neg_ratio)``; only support pairs count as known positives."""
    return sample_negatives(task, task.support, state.hp.neg_ratio, _sub_seed(seed, "support-neg"),
                            known=set(map(tuple, task.support.tolist()))).tails


@dataclass
class _Forward:
    enc: Encoding
    r: np.ndarray
    mlp_cache: tuple | None
    support_terms: TranseTerms | None
    s_rows: tuple | None
    r_prime: np.ndarray


def _forward(state: ModelState, task: FewShotTask, graph, seed: int, extra_ids=()) -> _Forward:
    hp = state.hp
    v = state.variant
    updates = v != "ZeroShot" and hp.eta != 0
    if v in ("MetaR", "RGCN") and task.k == 0:
        raise ValueError(f"variant {v} needs a non-empty support set")
    s_neg = support_negatives(state, task, seed) if updates and task.k else np.zeros((0, hp.neg_ratio), np.int64)
    ids = [np.asarray(extra_ids, dtype=np.int64).reshape(-1)]
    if v != "ZeroShot":
        ids += [task.support.reshape(-1), s_neg.reshape(-1)]
    enc = Encoding(state, np.concatenate(ids), graph, _sub_seed(seed, "encode"))

    mlp_cache = None
    s_rows = None
    if v in ("MetaR", "RGCN"):
        s_rows = (enc.rows(task.support[:, 0]), enc.rows(task.support[:, 1]), enc.rows(s_neg))
        r, mlp_cache = mlp_forward(state.params, enc.X[s_rows[0]], enc.X[s_rows[1]])
    else:
        r = state.params["r_g"]

    terms = None
    r_prime = r
    if updates and task.k:
        if s_rows is None:
            s_rows = (enc.rows(task.support[:, 0]), enc.rows(task.support[:, 1]), enc.rows(s_neg))
        X = enc.X
        terms = transe_terms(X[s_rows[0]], r, X[s_rows[1]], X[s_rows[2]], hp.gamma, hp.norm)
        r_prime = r - hp.eta * terms.grad_r()
    return _Forward(enc, r, mlp_cache, terms, s_rows, r_prime)


def relation_embed(state: ModelState, task: FewShotTask, graph: KnowledgeGraph | None = None,
                   seed: int = 0) -> np.ndarray:
    """Pre-update relation vector for the state's variant."""
    v = state.variant
    if v in ("SharedEmbed", "ZeroShot"):
        return state.params["r_g"].copy()
    if task.k == 0:
        raise ValueError(f"variant {v} needs a non-empty support set")
    enc = Encoding(state, task.support.reshape(-1), graph, _sub_seed(seed, "encode"))
    return mlp_forward(state.params, enc.X[enc.rows(task.support[:, 0])], enc.X[enc.rows(task.support[:, 1])])[0]


def support_gradient_step(state: ModelState, task: FewShotTask, r: np.ndarray, eta: float, seed: int,
                          graph: KnowledgeGraph | None = None) -> np.ndarray:
    """One step ``r - eta * grad_r L(support)``; ZeroShot returns ``r`` untouched."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    r = np.asarray(r, dtype=np.float64)
    if state.variant == "ZeroShot" or eta == 0:
        return r.copy()
    if task.k == 0:
        raise ValueError("support step needs a non-empty support set")
    s_neg = support_negatives(state, task, seed)
    enc = Encoding(state, np.concatenate([task.support.reshape(-1), s_neg.reshape(-1)]), graph,
                   _sub_seed(seed, "encode"))
    X = enc.X
    terms = transe_terms(X[enc.rows(task.support[:, 0])], r, X[enc.rows(task.support[:, 1])],
                         X[enc.rows(s_neg)], state.hp.gamma, state.hp.norm)
    return r - eta * terms.grad_r()


def adapt(state: ModelState, task: FewShotTask, graph: KnowledgeGraph | None = None, seed: int = 0) -> np.ndarray:
    """Adapted relation vector r' for a task."""
    return _forward(state, task, graph, seed).r_prime


def task_loss(state: ModelState, task: FewShotTask, query_neg: np.ndarray, graph: KnowledgeGraph | None = None,
              seed: int = 0, grads: GradientBundle | None = None, scale: float = 1.0) -> float:
    """Query margin loss after the support step; accumulates ``scale * gradient`` into ``grads``.

    The support step is treated as a constant shift unless ``hp.second_order``
    is set, in which case the gradient flows through it exactly.
    """
    hp = state.hp
    q = task.queries
    query_neg = np.asarray(query_neg, dtype=np.int64).reshape(len(q), -1)
    fw = _forward(state, task, graph, seed, extra_ids=np.concatenate([q.reshape(-1), query_neg.reshape(-1)]))
    enc, X = fw.enc, fw.enc.X
    qh, qt, qn = enc.rows(q[:, 0]), enc.rows(q[:, 1]), enc.rows(query_neg)
    qterms = transe_terms(X[qh], fw.r_prime, X[qt], X[qn], hp.gamma, hp.norm)
    if grads is None:
        return qterms.loss

    dX = np.zeros_like(X)
    gh, gt, gn = qterms.grad_inputs()
    np.add.at(dX, qh, gh)
    np.add.at(dX, qt, gt)
    np.add.at(dX, qn, gn)
    dr = qterms.grad_r()
    if hp.second_order and fw.support_terms is not None:
        wp, wn = fw.support_terms.hvp_terms(dr, hp.norm)
        sh, st, sn = fw.s_rows
        np.add.at(dX, sh, -hp.eta * (wp + wn.sum(1)))
        np.add.at(dX, st, hp.eta * wp)
        np.add.at(dX, sn, hp.eta * wn)
        dr = dr - hp.eta * (wp.sum(0) + wn.sum((0, 1)))
    if fw.mlp_cache is not None:
        dH, dT = mlp_backward(state.params, fw.mlp_cache, dr, grads, scale)
        sh, st, _ = fw.s_rows
        np.add.at(dX, sh, dH)
        np.add.at(dX, st, dT)
    elif "r_g" in grads:
        grads["r_g"] += scale * dr
    enc.backward(dX, grads, scale)
    return qterms.loss


def score_candidates(state: ModelState, task: FewShotTask, r_prime: np.ndarray,
                     graph: KnowledgeGraph | None = None, seed: int = 0,
                     heads: np.ndarray | None = None) -> np.ndarray:
    """Scores ``(J, C)``: negated TransE distance of each query head to every candidate."""
    heads = task.queries[:, 0] if heads is None else np.asarray(heads, dtype=np.int64)
    enc = Encoding(state, np.concatenate([heads, task.candidates]), graph, _sub_seed(seed, "encode"))
    Hq = enc.X[enc.rows(heads)]
    C = enc.X[enc.rows(task.candidates)]
    out = np.empty((len(heads), len(C)))
    for i, h in enumerate(Hq):
        out[i] = -_norm_and_grad(h + r_prime - C, state.hp.norm)[0]
    return out


def score_query(state: ModelState, task: FewShotTask, r_prime: np.ndarray, query: tuple[int, int],
                graph: KnowledgeGraph | None = None, seed: int = 0) -> float:
    h, c = query
    if c not in set(task.candidates.tolist()):
        raise ValueError(f"candidate {c} is not in the task's candidate set")
    enc = Encoding(state, np.array([h, c]), graph, _sub_seed(seed, "encode"))
    return -transe_distance(enc.X[enc.rows([h])[0]], r_prime, enc.X[enc.rows([c])[0]], state.hp.norm)


# ---------------------------------------------------------------- pre-trained embeddings

def load_pretrained_embeddings(path: str | Path, state: ModelState, entities: Vocab,
                               freeze: bool = True) -> ModelState:
    """Overwrite entity rows from a ``d <dim>`` header + ``name<TAB>floats`` file.

    Returns the state (modified in place); entities missing from the file keep
    their initialisation and are counted in a warning.
    """
    E = state.params["entity"]
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "d":
            raise ValueError(f"{path}:1: expected header 'd <dim>'")
        dim = int(header[1])
        if dim != E.shape[1]:
            raise ValueError(f"{path}: embedding dim {dim} does not match model dim {E.shape[1]}")
        covered = set()
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            name, _, rest = line.partition("\t")
            try:
                vec = np.array([float(x) for x in rest.split()], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed float ({exc})") from None
            if len(vec) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(vec)}")
            e = entities.get(name)
            if e is None:
                continue
            E[e] = vec
            covered.add(e)
    missing = len(E) - len(covered)
    if missing:
        logger.warning("pre-trained embeddings: %d entities not covered, keeping their initialisation", missing)
    if freeze:
        state.frozen.add("entity")
    return state
