"""Cognitive GNN forward pass and exact reverse-mode gradients.

The forward computation per layer, for center node v with selected
neighbors N_K(v):

    e_uv   = attn_mlp(P(u,v)) + beta * struct_score(u,v)
             + gamma * cos(h_u, h_v)
    alpha  = softmax_T(e; tau) over N_K(v)
    m_v    = sum_u alpha_uv (W_neigh h_u + W_edge embed(r_uv))
    h_v'   = LayerNorm(ReLU(W_self h_v + m_v + b)) + Dropout(h_v)

Neighbor selection happens once per forward from h^(0) salience and is a
frozen, non-differentiable choice; everything else gets hand-written
backward rules checked against finite differences. The same equations
also run on bare feature vectors (isolated nodes, empty neighborhoods),
which is how adversarial samples and memory entries are scored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .encoder import SemanticEncoder, render_pair_prompt
from .errors import DimensionMismatch, NonFiniteGradient
from .graph import RELATION_KINDS, HeteroGraph, StructuralStats
from .model import ModelState

_LN_EPS = 1e-5
_LOGIT_CLIP = 36.0  # sigmoid(+-36) is still strictly inside (0, 1) in float64


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.clip(z, -_LOGIT_CLIP, _LOGIT_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def layer_norm(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """No-affine LayerNorm over the last axis; returns (y, inv_std).

    A constant row has zero numerator, so the variance-0 case yields the
    zero vector without special-casing.
    """
    mean = a.mean(axis=-1, keepdims=True)
    var = ((a - mean) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    return (a - mean) * inv, inv


def layer_norm_backward(g: np.ndarray, y: np.ndarray, inv: np.ndarray) -> np.ndarray:
    gm = g.mean(axis=-1, keepdims=True)
    gy = (g * y).mean(axis=-1, keepdims=True)
    return inv * (g - gm - y * gy)


def _row_cosine(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row cosine with zero-vector guard; returns (cos, norm_a, norm_b)."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    den = na * nb
    dot = np.einsum("ij,ij->i", a, b)
    cos = np.divide(dot, den, out=np.zeros_like(dot), where=den > 0)
    return cos, na, nb


def _segment_sum(values: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(idx, weights=values, minlength=n)


def _segment_softmax(e: np.ndarray, idx: np.ndarray, tau: float, n: int) -> np.ndarray:
    """Temperature softmax within segments, max-subtracted for stability."""
    if e.size == 0:
        return e.copy()
    m = np.full(n, -np.inf)
    np.maximum.at(m, idx, e)
    z = np.exp((e - m[idx]) / tau)
    denom = _segment_sum(z, idx, n)
    return z / denom[idx]


# ---------------------------------------------------------------------------
# Single-pair operations (the formulas one call at a time; the vectorized
# forward below must agree with these, which the tests exploit).

def init_embeddings(features: np.ndarray, model: ModelState) -> np.ndarray:
    """h^(0) = LayerNorm(ReLU(W_init x + b_init)) for every node."""
    if features.shape[-1] != model.hyper.d:
        raise DimensionMismatch(
            f"feature width {features.shape[-1]} != model d {model.hyper.d}")
    pre = features @ model["w_init"].T + model["b_init"]
    y, _ = layer_norm(relu(pre))
    return y


def salience(u: int, v: int, stats: StructuralStats, h0: np.ndarray,
             model: ModelState) -> float:
    """S(u,v): softmax-mixed structural, co-occurrence, and semantic terms."""
    w = model.salience_weights()
    pr = stats.pagerank[u]
    deg_term = stats.degree[u] / max(stats.max_degree, 1)
    path_term = 1.0 / (1.0 + stats.shortest_path.query(u, v))
    s_struct = pr + deg_term + path_term
    tc = stats.total_count
    if tc[u] == 0 or tc[v] == 0:
        s_freq = 0.0
    else:
        s_freq = stats.co_occurrence(u, v) / np.sqrt(float(tc[u]) * float(tc[v]))
    hu, hv = h0[u], h0[v]
    nu, nv = np.linalg.norm(hu), np.linalg.norm(hv)
    s_sem = float(hu @ hv / (nu * nv)) if nu > 0 and nv > 0 else 0.0
    return float(w[0] * s_struct + w[1] * s_freq + w[2] * s_sem)


def select_neighbors(v: int, graph: HeteroGraph, salience_fn: Callable[[int, int], float],
                     K: int) -> list[int]:
    """Top-K adjacency neighbors of v by salience, ties by ascending node id."""
    nbrs = [int(u) for u in graph.neighbors(v)]
    ranked = sorted(nbrs, key=lambda u: (-salience_fn(u, v), graph.nodes[u].id))
    return ranked[:K]


def attention_logits(u: int, v: int, h_prev: np.ndarray, p_uv: np.ndarray,
                     rel_kind: str, stats: StructuralStats, model: ModelState) -> float:
    """e_uv for one pair at one layer, given that layer's input embeddings."""
    hidden = np.tanh(model["attn_w1"] @ p_uv + model["attn_b1"])
    mlp = float(sigmoid(np.asarray(hidden @ model["attn_w2"] + model["attn_b2"])))
    feats = np.array([
        model["w_r"][RELATION_KINDS.index(rel_kind)],
        np.log1p(stats.degree[u]),
        np.log1p(stats.degree[v]),
        1.0 / (1.0 + stats.shortest_path.query(u, v)),
    ])
    struct = float(model["w_struct"] @ feats)
    hu, hv = h_prev[u], h_prev[v]
    nu, nv = np.linalg.norm(hu), np.linalg.norm(hv)
    cos = float(hu @ hv / (nu * nv)) if nu > 0 and nv > 0 else 0.0
    return mlp + model.hyper.beta * struct + model.hyper.gamma * cos


def normalize_attention(logits: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax over one neighborhood; empty input stays empty."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        return logits.copy()
    z = np.exp((logits - logits.max()) / tau)
    return z / z.sum()


def predict(layer_embeddings: list[np.ndarray], model: ModelState) -> float:
    """sigmoid(W_out concat(h^(1)..h^(L)) + b_out) for one node."""
    z = np.concatenate(layer_embeddings)
    return float(sigmoid(np.asarray(z @ model["w_out"] + model["b_out"])))


# ---------------------------------------------------------------------------
# Vectorized forward

@dataclass
class PairSelection:
    """Frozen N_K(v) choice flattened to pair arrays, sorted by center node."""

    src: np.ndarray          # neighbor u per pair
    dst: np.ndarray          # center v per pair
    rel: np.ndarray          # relation index of edge (u, v)
    indptr: np.ndarray       # CSR boundaries over dst groups (n+1)
    prompts: np.ndarray      # P(u, v) matrix (pairs, d_p)
    struct_static: np.ndarray  # columns [log1p deg u, log1p deg v, 1/(1+spath)]

    @property
    def n_pairs(self) -> int:
        return int(self.src.size)

    def pairs_of(self, v: int) -> slice:
        return slice(int(self.indptr[v]), int(self.indptr[v + 1]))


@dataclass
class ForwardTrace:
    """Everything the spec's Trace(E) needs plus backward-pass caches."""

    H: list[np.ndarray]
    alpha: list[np.ndarray]
    selection: PairSelection
    email_index: np.ndarray
    scores: np.ndarray
    out_logits: np.ndarray
    training: bool
    # backward caches
    ln_y: list[np.ndarray] = field(default_factory=list)
    ln_inv: list[np.ndarray] = field(default_factory=list)
    relu_mask: list[np.ndarray] = field(default_factory=list)
    cos: list[np.ndarray] = field(default_factory=list)
    drop_mask: list[Optional[np.ndarray]] = field(default_factory=list)
    mlp_t: Optional[np.ndarray] = None
    mlp_out: Optional[np.ndarray] = None

    def neighbor_set(self, v: int) -> np.ndarray:
        return self.selection.src[self.selection.pairs_of(v)]

    def attention_row(self, layer: int, v: int) -> tuple[np.ndarray, np.ndarray]:
        """(neighbor indices, attention weights) into v at layer (1-based)."""
        sl = self.selection.pairs_of(v)
        return self.selection.src[sl], self.alpha[layer - 1][sl]

    def score_of(self, node_index: int) -> float:
        pos = np.flatnonzero(self.email_index == node_index)
        if pos.size == 0:
            raise KeyError(f"node {node_index} is not a scored email node")
        return float(self.scores[pos[0]])


def _id_rank(graph: HeteroGraph) -> np.ndarray:
    order = sorted(range(graph.n_nodes), key=lambda i: graph.nodes[i].id)
    rank = np.empty(graph.n_nodes, dtype=np.int64)
    rank[np.array(order, dtype=np.int64)] = np.arange(graph.n_nodes)
    return rank


def build_selection(graph: HeteroGraph, stats: StructuralStats, h0: np.ndarray,
                    model: ModelState, encoder: SemanticEncoder) -> PairSelection:
    """Vectorized top-K salience selection over every node's adjacency."""
    n = graph.n_nodes
    indptr, nbr, rel = graph.adjacency()
    dst_rep = np.repeat(np.arange(n), np.diff(indptr))

    w = model.salience_weights()
    cos, _, _ = _row_cosine(h0[nbr], h0[dst_rep])
    S = w[0] * stats.adj_s_struct + w[1] * stats.adj_s_freq + w[2] * cos

    rank = _id_rank(graph)
    order = np.lexsort((rank[nbr], -S, dst_rep))
    sorted_dst = dst_rep[order]
    group_sizes = np.diff(indptr)
    group_starts = np.repeat(indptr[:-1], group_sizes)
    offset = np.arange(sorted_dst.size) - group_starts
    keep = order[offset < model.hyper.top_k]

    sel_src = nbr[keep]
    sel_dst = dst_rep[keep]
    sel_rel = rel[keep]

    counts = np.bincount(sel_dst, minlength=n)
    sel_indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=sel_indptr[1:])

    prompts = encoder.encode_texts([
        render_pair_prompt(graph.nodes[int(u)], graph.nodes[int(v)],
                           RELATION_KINDS[int(r)], encoder.task_context)
        for u, v, r in zip(sel_src, sel_dst, sel_rel)])

    deg = stats.degree.astype(np.float64)
    # Selected pairs are graph-adjacent, hence one hop apart: 1/(1+1).
    struct_static = np.stack([
        np.log1p(deg[sel_src]), np.log1p(deg[sel_dst]),
        np.full(sel_src.size, 0.5),
    ], axis=1)
    return PairSelection(sel_src.astype(np.int64), sel_dst.astype(np.int64),
                         sel_rel.astype(np.int64), sel_indptr, prompts, struct_static)


def _attn_mlp(prompts: np.ndarray, model: ModelState) -> tuple[np.ndarray, np.ndarray]:
    t = np.tanh(prompts @ model["attn_w1"].T + model["attn_b1"])
    out = sigmoid(t @ model["attn_w2"] + model["attn_b2"])
    return out, t

def _struct_score(sel: PairSelection, model: ModelState) -> np.ndarray:
    ws = model["w_struct"]
    return (ws[0] * model["w_r"][sel.rel] + sel.struct_static @ ws[1:])


def forward(graph: HeteroGraph, stats: StructuralStats, model: ModelState,
            encoder: SemanticEncoder, training: bool = False,
            rng: Optional[np.random.Generator] = None,
            selection: Optional[PairSelection] = None) -> ForwardTrace:
    """Full forward pass over the graph, scoring every email node."""
    hyper = model.hyper
    X = graph.features
    if X.shape[1] != hyper.d:
        raise DimensionMismatch(f"feature width {X.shape[1]} != model d {hyper.d}")
    n = graph.n_nodes

    pre0 = X @ model["w_init"].T + model["b_init"]
    mask0 = pre0 > 0
    y0, inv0 = layer_norm(relu(pre0))
    H = [y0]

    sel = selection if selection is not None else build_selection(
        graph, stats, y0, model, encoder)

    mlp_out, mlp_t = _attn_mlp(sel.prompts, model)
    struct = _struct_score(sel, model)

    trace = ForwardTrace(H=H, alpha=[], selection=sel,
                         email_index=graph.email_indices, scores=np.zeros(0),
                         out_logits=np.zeros(0), training=training)
    trace.ln_y.append(y0)
    trace.ln_inv.append(inv0)
    trace.relu_mask.append(mask0)
    trace.mlp_out, trace.mlp_t = mlp_out, mlp_t

    use_dropout = training and hyper.dropout_rate > 0.0
    if use_dropout and rng is None:
        rng = np.random.default_rng(0)

    for k in range(hyper.n_layers):
        H_prev = H[-1]
        cos_k, _, _ = _row_cosine(H_prev[sel.src], H_prev[sel.dst])
        e = mlp_out + hyper.beta * struct + hyper.gamma * cos_k
        alpha = _segment_softmax(e, sel.dst, hyper.tau, n)

        HN = H_prev @ model["w_neigh"][k].T
        EM = model["relation_embed"] @ model["w_edge"][k].T
        msg = HN[sel.src] + EM[sel.rel]
        m = np.zeros_like(H_prev)
        np.add.at(m, sel.dst, alpha[:, None] * msg)

        h_tilde = H_prev @ model["w_self"][k].T + m + model["b_layer"][k]
        mask = h_tilde > 0
        y, inv = layer_norm(relu(h_tilde))
        if use_dropout:
            drop = (rng.random(H_prev.shape) >= hyper.dropout_rate).astype(
                np.float64) / (1.0 - hyper.dropout_rate)
            residual = H_prev * drop
        else:
            drop = None
            residual = H_prev
        H.append(y + residual)

        trace.alpha.append(alpha)
        trace.cos.append(cos_k)
        trace.relu_mask.append(mask)
        trace.ln_y.append(y)
        trace.ln_inv.append(inv)
        trace.drop_mask.append(drop)

    z = np.concatenate([H[k][graph.email_indices] for k in range(1, hyper.n_layers + 1)],
                       axis=1)
    logits = z @ model["w_out"] + model["b_out"]
    trace.out_logits = logits
    trace.scores = sigmoid(logits)
    return trace


@dataclass
class VectorTrace:
    """Forward records for isolated feature vectors (empty neighborhoods)."""

    H: list[np.ndarray]
    scores: np.ndarray
    out_logits: np.ndarray
    ln_y: list[np.ndarray]
    ln_inv: list[np.ndarray]
    relu_mask: list[np.ndarray]
    drop_mask: list[Optional[np.ndarray]]
    training: bool


def forward_vectors(X: np.ndarray, model: ModelState, training: bool = False,
                    rng: Optional[np.random.Generator] = None) -> VectorTrace:
    """Score bare feature vectors as isolated email nodes (zero messages)."""
    hyper = model.hyper
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != hyper.d:
        raise DimensionMismatch(f"feature width {X.shape[1]} != model d {hyper.d}")

    pre0 = X @ model["w_init"].T + model["b_init"]
    mask0 = pre0 > 0
    y0, inv0 = layer_norm(relu(pre0))
    H = [y0]
    ln_y, ln_inv, relu_mask, drops = [y0], [inv0], [mask0], []

    use_dropout = training and hyper.dropout_rate > 0.0
    if use_dropout and rng is None:
        rng = np.random.default_rng(0)

    for k in range(hyper.n_layers):
        H_prev = H[-1]
        h_tilde = H_prev @ model["w_self"][k].T + model["b_layer"][k]
        mask = h_tilde > 0
        y, inv = layer_norm(relu(h_tilde))
        if use_dropout:
            drop = (rng.random(H_prev.shape) >= hyper.dropout_rate).astype(
                np.float64) / (1.0 - hyper.dropout_rate)
            residual = H_prev * drop
        else:
            drop = None
            residual = H_prev
        H.append(y + residual)
        relu_mask.append(mask)
        ln_y.append(y)
        ln_inv.append(inv)
        drops.append(drop)

    z = np.concatenate(H[1:], axis=1)
    logits = z @ model["w_out"] + model["b_out"]
    return VectorTrace(H=H, scores=sigmoid(logits), out_logits=logits,
                       ln_y=ln_y, ln_inv=ln_inv, relu_mask=relu_mask,
                       drop_mask=drops, training=training)


# ---------------------------------------------------------------------------
# Reverse mode

class Gradients:
    """Per-parameter gradients plus input-feature gradients."""

    def __init__(self, params: dict[str, np.ndarray], d_features: np.ndarray):
        self.params = params
        self.d_features = d_features

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def check_finite(self):
        for name, arr in self.params.items():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteGradient(name)
        if not np.all(np.isfinite(self.d_features)):
            raise NonFiniteGradient("input features")

    def scaled(self, factor: float) -> "Gradients":
        return Gradients({k: v * factor for k, v in self.params.items()},
                         self.d_features * factor)

    def add_(self, other: "Gradients"):
        for k in self.params:
            self.params[k] += other.params[k]
        return self


def _zero_grads(model: ModelState) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in model.params.items()}


def _output_backward(dscore: np.ndarray, logits: np.ndarray, scores: np.ndarray):
    ds = scores * (1.0 - scores)
    ds = np.where(np.abs(logits) < _LOGIT_CLIP, ds, 0.0)
    return dscore * ds


def backward(trace: ForwardTrace, graph: HeteroGraph, model: ModelState,
             dscore: np.ndarray, features: Optional[np.ndarray] = None) -> Gradients:
    """Gradients of sum_v dscore[v] * score_v w.r.t. parameters and inputs.

    dscore aligns with trace.email_index. Salience logits are parameters of
    a discrete selection, so their gradient is identically zero.
    """
    hyper = model.hyper
    X = graph.features if features is None else features
    sel = trace.selection
    n = graph.n_nodes
    grads = _zero_grads(model)

    g_logit = _output_backward(np.asarray(dscore, dtype=np.float64),
                               trace.out_logits, trace.scores)
    z = np.concatenate([trace.H[k][trace.email_index]
                        for k in range(1, hyper.n_layers + 1)], axis=1)
    grads["w_out"] += g_logit @ z
    grads["b_out"] += g_logit.sum()
    g_z = np.outer(g_logit, model["w_out"])

    G = [np.zeros_like(trace.H[0]) for _ in range(hyper.n_layers + 1)]
    for k in range(1, hyper.n_layers + 1):
        G[k][trace.email_index] += g_z[:, (k - 1) * hyper.d_h: k * hyper.d_h]

    g_mlp_accum = np.zeros(sel.n_pairs)
    g_ss_accum = np.zeros(sel.n_pairs)

    for k in range(hyper.n_layers, 0, -1):
        H_prev = trace.H[k - 1]
        alpha = trace.alpha[k - 1]
        g_Hk = G[k]

        drop = trace.drop_mask[k - 1]
        g_res = g_Hk * drop if drop is not None else g_Hk.copy()

        g_a = layer_norm_backward(g_Hk, trace.ln_y[k], trace.ln_inv[k])
        g_pre = g_a * trace.relu_mask[k]

        grads["w_self"][k - 1] += g_pre.T @ H_prev
        grads["b_layer"][k - 1] += g_pre.sum(axis=0)
        g_prev = g_res + g_pre @ model["w_self"][k - 1]
        g_m = g_pre

        HN = H_prev @ model["w_neigh"][k - 1].T
        EM = model["relation_embed"] @ model["w_edge"][k - 1].T
        msg = HN[sel.src] + EM[sel.rel]
        g_pair_m = g_m[sel.dst]

        g_alpha = np.einsum("ij,ij->i", msg, g_pair_m)
        g_msg = alpha[:, None] * g_pair_m

        g_HN = np.zeros_like(H_prev)
        np.add.at(g_HN, sel.src, g_msg)
        grads["w_neigh"][k - 1] += g_HN.T @ H_prev
        g_prev += g_HN @ model["w_neigh"][k - 1]

        g_EM = np.zeros((hyper.n_relations, hyper.d_h))
        np.add.at(g_EM, sel.rel, g_msg)
        grads["w_edge"][k - 1] += g_EM.T @ model["relation_embed"]
        grads["relation_embed"] += g_EM @ model["w_edge"][k - 1]

        # softmax backward within each neighborhood
        inner = _segment_sum(g_alpha * alpha, sel.dst, n)
        g_e = (alpha / hyper.tau) * (g_alpha - inner[sel.dst])

        g_mlp_accum += g_e
        g_ss_accum += hyper.beta * g_e

        # cosine backward into both endpoints
        g_cos = hyper.gamma * g_e
        u_vec, v_vec = H_prev[sel.src], H_prev[sel.dst]
        cos_k = trace.cos[k - 1]
        nu = np.linalg.norm(u_vec, axis=1)
        nv = np.linalg.norm(v_vec, axis=1)
        den = nu * nv
        safe = den > 0
        coef = np.where(safe, np.divide(g_cos, den, out=np.zeros_like(den),
                                        where=safe), 0.0)
        cu = np.where(safe, np.divide(g_cos * cos_k, nu * nu,
                                      out=np.zeros_like(den), where=nu > 0), 0.0)
        cv = np.where(safe, np.divide(g_cos * cos_k, nv * nv,
                                      out=np.zeros_like(den), where=nv > 0), 0.0)
        g_u = coef[:, None] * v_vec - cu[:, None] * u_vec
        g_v = coef[:, None] * u_vec - cv[:, None] * v_vec
        np.add.at(g_prev, sel.src, g_u)
        np.add.at(g_prev, sel.dst, g_v)

        G[k - 1] += g_prev

    # layer 0: initial projection
    g_a0 = layer_norm_backward(G[0], trace.ln_y[0], trace.ln_inv[0])
    g_pre0 = g_a0 * trace.relu_mask[0]
    grads["w_init"] += g_pre0.T @ X
    grads["b_init"] += g_pre0.sum(axis=0)
    d_features = g_pre0 @ model["w_init"]

    # attention MLP, shared across layers (prompt inputs are constants)
    if sel.n_pairs:
        s_mlp = trace.mlp_out
        g_l = g_mlp_accum * s_mlp * (1.0 - s_mlp)
        grads["attn_w2"] += trace.mlp_t.T @ g_l
        grads["attn_b2"] += g_l.sum()
        g_t = np.outer(g_l, model["attn_w2"])
        g_pre1 = g_t * (1.0 - trace.mlp_t ** 2)
        grads["attn_w1"] += g_pre1.T @ sel.prompts
        grads["attn_b1"] += g_pre1.sum(axis=0)

        # struct score: ws[0]*w_r[rel] + ws[1:] . static
        grads["w_struct"][0] += float(g_ss_accum @ model["w_r"][sel.rel])
        grads["w_struct"][1:] += g_ss_accum @ sel.struct_static
        np.add.at(grads["w_r"], sel.rel, g_ss_accum * model["w_struct"][0])

    out = Gradients(grads, d_features)
    out.check_finite()
    return out


def backward_vectors(trace: VectorTrace, model: ModelState, dscore: np.ndarray,
                     X: np.ndarray) -> Gradients:
    """Reverse mode for the isolated-vector forward; rows are independent,
    so d_features[i] is exactly dscore[i] * d(score_i)/d(x_i)."""
    hyper = model.hyper
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    grads = _zero_grads(model)

    g_logit = _output_backward(np.asarray(dscore, dtype=np.float64),
                               trace.out_logits, trace.scores)
    z = np.concatenate(trace.H[1:], axis=1)
    grads["w_out"] += g_logit @ z
    grads["b_out"] += g_logit.sum()
    g_z = np.outer(g_logit, model["w_out"])

    G = [np.zeros_like(trace.H[0]) for _ in range(hyper.n_layers + 1)]
    for k in range(1, hyper.n_layers + 1):
        G[k] += g_z[:, (k - 1) * hyper.d_h: k * hyper.d_h]

    for k in range(hyper.n_layers, 0, -1):
        H_prev = trace.H[k - 1]
        g_Hk = G[k]
        drop = trace.drop_mask[k - 1]
        g_res = g_Hk * drop if drop is not None else g_Hk.copy()
        g_a = layer_norm_backward(g_Hk, trace.ln_y[k], trace.ln_inv[k])
        g_pre = g_a * trace.relu_mask[k]
        grads["w_self"][k - 1] += g_pre.T @ H_prev
        grads["b_layer"][k - 1] += g_pre.sum(axis=0)
        G[k - 1] += g_res + g_pre @ model["w_self"][k - 1]

    g_a0 = layer_norm_backward(G[0], trace.ln_y[0], trace.ln_inv[0])
    g_pre0 = g_a0 * trace.relu_mask[0]
    grads["w_init"] += g_pre0.T @ X
    grads["b_init"] += g_pre0.sum(axis=0)
    d_features = g_pre0 @ model["w_init"]

    out = Gradients(grads, d_features)
    out.check_finite()
    return out


def input_gradient(trace: ForwardTrace, graph: HeteroGraph, model: ModelState,
                   node_index: int) -> np.ndarray:
    """d(score_v)/d(x_v) for one email node, via a one-hot backward pass."""
    pos = np.flatnonzero(trace.email_index == node_index)
    if pos.size == 0:
        raise KeyError(f"node {node_index} is not a scored email node")
    dscore = np.zeros(trace.email_index.size)
    dscore[pos[0]] = 1.0
    return backward(trace, graph, model, dscore).d_features[node_index]
