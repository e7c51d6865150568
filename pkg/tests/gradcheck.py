"""Finite-difference gradient checks on random small instances.

Each ``check_*`` returns the worst relative error over ``n`` instances.
Instances sitting within ``KINK`` of a hinge or rectifier kink are redrawn,
since a central difference straddling the kink measures a different branch.
"""

from __future__ import annotations

import numpy as np

from conftest import numeric_grad, relative_error
from fewshot_kg import rgcn
from fewshot_kg.kg import KnowledgeGraph
from fewshot_kg.model import (
    HyperParams,
    _forward,
    _norm_and_grad,
    init_state,
    mlp_backward,
    mlp_forward,
    support_gradient_step,
    task_loss,
    transe_terms,
)
from fewshot_kg.tasks import sample_negatives, task_from_pairs

STEP = 1e-3
KINK = 1e-2


def _instances(n, make, max_tries=2000):
    rng = np.random.default_rng(1234)
    got = 0
    for _ in range(max_tries):
        inst = make(rng)
        if inst is None:
            continue
        yield inst
        got += 1
        if got == n:
            return
    raise RuntimeError("could not draw enough generic instances")


def check_transe_distance(n=20, norm="L2"):
    worst = 0.0

    def make(rng):
        D = int(rng.integers(2, 7))
        h, r, t = rng.normal(size=(3, D))
        if norm == "L1" and np.min(np.abs(h + r - t)) < KINK:
            return None
        return h, r, t

    for h, r, t in _instances(n, make):
        w = np.random.default_rng(0).normal()
        f = lambda: w * _norm_and_grad(h + r - t, norm)[0]
        u = w * _norm_and_grad(h + r - t, norm)[1]
        for x, a in ((h, u), (r, u), (t, -u)):
            worst = max(worst, relative_error(a, numeric_grad(f, x, STEP)))
    return worst


def check_margin_loss(n=20, norm="L2"):
    worst = 0.0

    def make(rng):
        P, m, D = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 6))
        H, T = rng.normal(size=(2, P, D))
        Tn = rng.normal(size=(P, m, D))
        r = rng.normal(size=D)
        gamma = float(rng.uniform(0.5, 2.0))
        terms = transe_terms(H, r, T, Tn, gamma, norm)
        if np.min(np.abs(gamma + terms.d_pos[:, None] - terms.d_neg)) < KINK or terms.loss == 0:
            return None
        if norm == "L1" and min(np.abs(H + r - T).min(), np.abs(H[:, None] + r - Tn).min()) < KINK:
            return None
        return H, r, T, Tn, gamma

    for H, r, T, Tn, gamma in _instances(n, make):
        f = lambda: transe_terms(H, r, T, Tn, gamma, norm).loss
        terms = transe_terms(H, r, T, Tn, gamma, norm)
        gH, gT, gTn = terms.grad_inputs()
        for x, a in ((H, gH), (r, terms.grad_r()), (T, gT), (Tn, gTn)):
            worst = max(worst, relative_error(a, numeric_grad(f, x, STEP)))
    return worst


def check_mlp(n=20):
    worst = 0.0

    def make(rng):
        D, dh, K = int(rng.integers(2, 5)), int(rng.integers(2, 6)), 3
        p = {
            "mlp.W1": rng.normal(size=(2 * D, dh)), "mlp.b1": rng.normal(size=dh),
            "mlp.W2": rng.normal(size=(dh, D)), "mlp.b2": rng.normal(size=D),
        }
        H, T = rng.normal(size=(2, K, D))
        pre = mlp_forward(p, H, T)[1][1]
        if np.min(np.abs(pre)) < KINK:
            return None
        return p, H, T, rng.normal(size=D)

    for p, H, T, w in _instances(n, make):
        f = lambda: float(w @ mlp_forward(p, H, T)[0])
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        dH, dT = mlp_backward(p, mlp_forward(p, H, T)[1], w, grads)
        for k in p:
            worst = max(worst, relative_error(grads[k], numeric_grad(f, p[k], STEP)))
        worst = max(worst, relative_error(dH, numeric_grad(f, H, STEP)))
        worst = max(worst, relative_error(dT, numeric_grad(f, T, STEP)))
    return worst


def _toy_kg(rng, n_ent=6, n_rel=2, n_trip=14):
    rows = [(f"e{i}", f"r{rng.integers(n_rel)}", f"e{(i + 1) % n_ent}") for i in range(n_ent)]
    rows += [(f"e{rng.integers(n_ent)}", f"r{rng.integers(n_rel)}", f"e{rng.integers(n_ent)}")
             for _ in range(n_trip - n_ent)]
    return KnowledgeGraph.from_strings(rows)


def check_rgcn(n=20):
    worst = 0.0

    def make(rng):
        g = _toy_kg(rng)
        B, din, hid = int(rng.integers(1, 4)), 3, int(rng.integers(2, 4))
        p = {"entity": rng.normal(size=(g.n_entities, din))}
        p.update(rgcn.init_params(rng, din, hid, B, g.n_relations, 1.0))
        targets = np.unique(rng.integers(g.n_entities, size=3))
        cap = int(rng.integers(1, 4))
        enc = rgcn.RGCNEncoding(p, g, targets, cap, seed=int(rng.integers(100)))
        if min(np.abs(x).min() for x in enc.pre_activations()) < KINK:
            return None
        return p, g, targets, cap, enc, rng.normal(size=enc.output.shape)

    for p, g, targets, cap, enc, w in _instances(n, make):
        seed = 0
        enc = rgcn.RGCNEncoding(p, g, targets, cap, seed)
        if min(np.abs(x).min() for x in enc.pre_activations()) < KINK:
            continue
        f = lambda: float((w * rgcn.RGCNEncoding(p, g, targets, cap, seed).output).sum())
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        enc.backward(w, grads)
        for k in p:
            worst = max(worst, relative_error(grads[k], numeric_grad(f, p[k], STEP)))
    return worst


def _meta_pattern(st, task, qn, g, seed):
    """Active hinge pairs and rectifier signs, plus the smallest distance to any kink."""
    hp = st.hp
    fw = _forward(st, task, g, seed, extra_ids=np.concatenate([task.queries.reshape(-1), qn.reshape(-1)]))
    X, r = fw.enc.X, fw.enc.rows
    q = transe_terms(X[r(task.queries[:, 0])], fw.r_prime, X[r(task.queries[:, 1])], X[r(qn)], hp.gamma, hp.norm)
    margins = [hp.gamma + q.d_pos[:, None] - q.d_neg]
    if fw.support_terms is not None:
        margins.append(hp.gamma + fw.support_terms.d_pos[:, None] - fw.support_terms.d_neg)
    if fw.mlp_cache is not None:
        margins.append(fw.mlp_cache[1])
    if st.variant == "RGCN":
        margins += list(fw.enc._rgcn.pre_activations())
    return [m > 0 for m in margins], min(np.abs(m).min() for m in margins)


def meta_instance(rng, variant, norm="L2"):
    g = _toy_kg(rng, n_ent=8, n_rel=3, n_trip=20)
    hp = HyperParams(d=3, eta=float(rng.uniform(0.2, 1.5)), gamma=float(rng.uniform(0.5, 1.5)), neg_ratio=2,
                     norm=norm, second_order=True, rgcn_hidden=3, rgcn_bases=2, rgcn_neighbors=3)
    st = init_state(variant, g.n_entities, g.n_relations, hp, seed=int(rng.integers(1000)))
    for k in st.params:
        st.params[k] = st.params[k] + 0.5 * rng.normal(size=st.params[k].shape)
    pairs = np.unique(rng.integers(g.n_entities, size=(7, 2)), axis=0)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if len(pairs) < 4:
        return None
    task = task_from_pairs("x", pairs, 3, "all-remaining", np.arange(g.n_entities), seed=int(rng.integers(1000)))
    qn = sample_negatives(task, task.queries, 2, seed=int(rng.integers(1000)), known=task.known).tails
    seed = int(rng.integers(1000))
    if _meta_pattern(st, task, qn, g, seed)[1] < KINK:
        return None
    return st, task, qn, g, seed


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_meta_gradient(n=20, variant="MetaR"):
    """Exact (second-order) gradient of the post-adaptation query loss, every parameter group.

    The loss is piecewise smooth; an instance counts only if every point of the
    difference stencil shares its activation pattern, otherwise another is drawn.
    """
    worst, got = 0.0, 0
    for st, task, qn, g, seed in _instances(10 * n, lambda rng: meta_instance(rng, variant)):
        base = _meta_pattern(st, task, qn, g, seed)[0]
        crossed = []

        def f():
            if not crossed and not _same(base, _meta_pattern(st, task, qn, g, seed)[0]):
                crossed.append(True)
            return task_loss(st, task, qn, g, seed)

        grads = st.zero_grads()
        task_loss(st, task, qn, g, seed, grads)
        errs = [relative_error(grads[k], numeric_grad(f, st.params[k], STEP)) for k in grads]
        if crossed:
            continue
        worst = max(worst, *errs)
        got += 1
        if got == n:
            return worst
    raise RuntimeError("could not draw enough smooth instances")


def check_support_step(n=20):
    """r' - r equals -eta times the finite-difference gradient of the support loss in r."""
    worst = 0.0
    for st, task, qn, g, seed in _instances(n, lambda rng: meta_instance(rng, "SharedEmbed")):
        fw = _forward(st, task, g, seed)
        X, rows = fw.enc.X, fw.enc.rows
        sh, stl, sn = rows(task.support[:, 0]), rows(task.support[:, 1]), fw.s_rows[2]
        r = fw.r.copy()
        f = lambda: transe_terms(X[sh], r, X[stl], X[sn], st.hp.gamma, st.hp.norm).loss
        fd = numeric_grad(f, r, STEP)
        step = support_gradient_step(st, task, fw.r, st.hp.eta, seed, g) - fw.r
        worst = max(worst, relative_error(step, -st.hp.eta * fd))
    return worst
