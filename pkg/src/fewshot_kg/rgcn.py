"""Two-layer relational GCN encoder with basis-decomposed relation weights.

Per layer, for a target entity ``u``::

    out_u = relu(x_u @ S + mean_{(v, r) in N(u)} x_v @ W_r),   W_r = sum_b a[r, b] V[b]

``N(u)`` is a seeded sample of at most ``cap`` background edges around ``u``;
inverse edges use relation index ``r + n_relations``.  Forward returns a
cache consumed by :func:`backward`, which accumulates analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import KnowledgeGraph
from .rng import stream

N_LAYERS = 2


def init_params(rng: np.random.Generator, d_in: int, hidden: int, n_bases: int, n_relations: int,
                bound: float) -> dict[str, np.ndarray]:
    params = {}
    for layer in range(N_LAYERS):
        fan_in = d_in if layer == 0 else hidden
        params[f"rgcn.V{layer}"] = rng.uniform(-bound, bound, (n_bases, fan_in, hidden))
        params[f"rgcn.a{layer}"] = rng.uniform(-bound, bound, (2 * n_relations, n_bases))
        params[f"rgcn.S{layer}"] = rng.uniform(-bound, bound, (fan_in, hidden))
    return params


def sample_neighbors(g: KnowledgeGraph, u: int, layer: int, cap: int, seed: int) -> list[tuple[int, int]]:
    """Seeded ``(neighbor, relation-index)`` sample around ``u`` for one layer."""
    adj = g.adjacency[u]
    R = g.n_relations
    if len(adj) > cap:
        pick = np.sort(stream(seed, "rgcn", layer, u).choice(len(adj), size=cap, replace=False))
        adj = [adj[i] for i in pick.tolist()]
    return [(v, r + R * direction) for v, r, direction in adj]


@dataclass
class _Block:
    out_ids: np.ndarray
    in_ids: np.ndarray
    self_idx: np.ndarray
    e_out: np.ndarray
    e_in: np.ndarray
    e_rel: np.ndarray
    e_w: np.ndarray


def _build_block(g: KnowledgeGraph, out_ids: np.ndarray, layer: int, cap: int, seed: int) -> _Block:
    in_pos: dict[int, int] = {}
    in_ids: list[int] = []

    def pos(e: int) -> int:
        p = in_pos.get(e)
        if p is None:
            p = in_pos[e] = len(in_ids)
            in_ids.append(e)
        return p

    self_idx = [pos(int(u)) for u in out_ids]
    e_out, e_in, e_rel, e_w = [], [], [], []
    for i, u in enumerate(out_ids.tolist()):
        nb = sample_neighbors(g, u, layer, cap, seed)
        for v, r in nb:
            e_out.append(i)
            e_in.append(pos(v))
            e_rel.append(r)
            e_w.append(1.0 / len(nb))
    return _Block(
        np.asarray(out_ids, dtype=np.int64),
        np.array(in_ids, dtype=np.int64),
        np.array(self_idx, dtype=np.int64),
        np.array(e_out, dtype=np.int64),
        np.array(e_in, dtype=np.int64),
        np.array(e_rel, dtype=np.int64),
        np.array(e_w, dtype=np.float64),
    )


def _layer_forward(X: np.ndarray, blk: _Block, V: np.ndarray, a: np.ndarray, S: np.ndarray):
    XV = np.einsum("nd,bde->nbe", X, V)
    msg = np.einsum("eb,ebo->eo", a[blk.e_rel], XV[blk.e_in])
    pre = X[blk.self_idx] @ S
    np.add.at(pre, blk.e_out, blk.e_w[:, None] * msg)
    return np.maximum(pre, 0.0), (X, XV, pre)


def _layer_backward(dout, blk: _Block, V, a, S, cache, grads, layer, scale):
    X, XV, pre = cache
    dpre = dout * (pre > 0)
    dX = np.zeros_like(X)
    dX_self = dpre @ S.T
    np.add.at(dX, blk.self_idx, dX_self)
    dmsg = blk.e_w[:, None] * dpre[blk.e_out]  # (E, out)
    da = np.zeros_like(a)
    np.add.at(da, blk.e_rel, np.einsum("eo,ebo->eb", dmsg, XV[blk.e_in]))
    dXV = np.zeros_like(XV)
    np.add.at(dXV, blk.e_in, a[blk.e_rel][:, :, None] * dmsg[:, None, :])
    dV = np.einsum("nd,nbe->bde", X, dXV)
    dX += np.einsum("nbe,bde->nd", dXV, V)
    if grads is not None:
        for name, g in ((f"rgcn.V{layer}", dV), (f"rgcn.a{layer}", da), (f"rgcn.S{layer}", X[blk.self_idx].T @ dpre)):
            if name in grads:
                grads[name] += scale * g
    return dX


class RGCNEncoding:
    """Forward pass for a fixed target set, keeping what backward needs."""

    def __init__(self, params: dict[str, np.ndarray], g: KnowledgeGraph, targets: np.ndarray,
                 cap: int, seed: int):
        if "rgcn.V0" not in params:
            raise ValueError("model has no R-GCN parameters")
        self.params = params
        targets = np.asarray(targets, dtype=np.int64)
        blk1 = _build_block(g, targets, 1, cap, seed)
        blk0 = _build_block(g, blk1.in_ids, 0, cap, seed)
        self.blocks = (blk0, blk1)
        X0 = params["entity"][blk0.in_ids]
        H1, c0 = _layer_forward(X0, blk0, params["rgcn.V0"], params["rgcn.a0"], params["rgcn.S0"])
        H2, c1 = _layer_forward(H1, blk1, params["rgcn.V1"], params["rgcn.a1"], params["rgcn.S1"])
        self.caches = (c0, c1)
        self.output = H2

    def backward(self, dout: np.ndarray, grads: dict[str, np.ndarray], scale: float = 1.0) -> None:
        p = self.params
        blk0, blk1 = self.blocks
        c0, c1 = self.caches
        dH1 = _layer_backward(dout, blk1, p["rgcn.V1"], p["rgcn.a1"], p["rgcn.S1"], c1, grads, 1, scale)
        dX0 = _layer_backward(dH1, blk0, p["rgcn.V0"], p["rgcn.a0"], p["rgcn.S0"], c0, grads, 0, scale)
        if "entity" in grads:
            np.add.at(grads["entity"], blk0.in_ids, scale * dX0)

    def pre_activations(self) -> list[np.ndarray]:
        return [c[2] for c in self.caches]
