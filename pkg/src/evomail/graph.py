"""Heterogeneous email graph: typed nodes, scored email-email relations,
entity expansion, and the structural statistics the attention model reads.

Email-email candidate pairs get four relation scores (domain, temporal,
semantic, sender); an edge exists when the max score clears the threshold
and its weight is the sum of all four. Entity nodes (sender, receiver,
domain, url, attachment) attach through fixed schema relations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import _serialize as ser
from .documents import EmailDocument
from .encoder import SemanticEncoder
from .errors import CandidateExplosion, CorruptFile, EmptyCorpus

NODE_KINDS = ("email", "sender", "receiver", "domain", "url", "attachment")
RELATION_KINDS = ("sent_to", "hosted_on", "contains", "linked_to", "replied_to",
                  "domain", "temporal", "semantic", "sender")
SCORED_RELATIONS = ("domain", "temporal", "semantic", "sender")

_KIND_INDEX = {k: i for i, k in enumerate(NODE_KINDS)}
REL_INDEX = {r: i for i, r in enumerate(RELATION_KINDS)}


@dataclass
class Node:
    id: str
    kind: str
    feature: np.ndarray
    subject: str = ""
    body: str = ""
    entity_value: str = ""
    doc_index: Optional[int] = None


@dataclass(frozen=True)
class Edge:
    u: str
    v: str
    relation_kind: str
    weight: float


@dataclass
class RelationParams:
    """Learnable relation weights plus temporal decay and edge threshold."""

    w_domain: float = 1.0
    w_temporal: float = 1.0
    w_semantic: float = 1.0
    w_sender: float = 1.0
    sigma_t: float = 86400.0
    epsilon_r: float = 0.5

    def weight_of(self, kind: str) -> float:
        return getattr(self, f"w_{kind}")


@dataclass
class CandidatePolicy:
    """How email-email candidate pairs are generated.

    all_pairs scores every pair but refuses corpora above `all_pairs_cap`;
    blocked scores only pairs sharing a sender, sender domain, or URL host,
    or falling within `temporal_window` seconds (default 2*sigma_t).
    """

    kind: str = "blocked"
    all_pairs_cap: int = 800
    temporal_window: Optional[float] = None


def _doc_text(doc: EmailDocument) -> str:
    return f"{doc.subject}\n{doc.body}"


def relation_score(u: EmailDocument, v: EmailDocument, kind: str,
                   params: RelationParams, encoder: Optional[SemanticEncoder] = None) -> float:
    """One of the four scored email-email relations for a single pair."""
    if kind == "domain":
        same = u.sender_domain is not None and u.sender_domain == v.sender_domain
        return float(same) * params.w_domain
    if kind == "temporal":
        if u.timestamp is None or v.timestamp is None:
            return 0.0
        return math.exp(-abs(u.timestamp - v.timestamp) / params.sigma_t) * params.w_temporal
    if kind == "semantic":
        if encoder is None:
            raise ValueError("semantic relation needs an encoder")
        eu = encoder.encode_text(_doc_text(u))
        ev = encoder.encode_text(_doc_text(v))
        return float(eu @ ev) * params.w_semantic
    if kind == "sender":
        same = u.sender_address is not None and u.sender_address == v.sender_address
        return float(same) * params.w_sender
    raise ValueError(f"unknown scored relation {kind!r}")


@dataclass(frozen=True)
class EmailEdge:
    u_index: int
    v_index: int
    relation_kind: str
    weight: float


def _candidate_pairs(docs: Sequence[EmailDocument], policy: CandidatePolicy,
                     sigma_t: float) -> list[tuple[int, int]]:
    n = len(docs)
    if policy.kind == "all_pairs":
        if n > policy.all_pairs_cap:
            raise CandidateExplosion(
                f"all_pairs over {n} docs exceeds cap {policy.all_pairs_cap}")
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    if policy.kind != "blocked":
        raise ValueError(f"unknown candidate policy {policy.kind!r}")

    pairs: set[tuple[int, int]] = set()
    blocks: dict[tuple[str, str], list[int]] = {}
    for i, doc in enumerate(docs):
        if doc.sender_address:
            blocks.setdefault(("s", doc.sender_address), []).append(i)
        if doc.sender_domain:
            blocks.setdefault(("d", doc.sender_domain), []).append(i)
        for url in doc.urls:
            blocks.setdefault(("u", url.host), []).append(i)
    for members in blocks.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                pairs.add((members[a], members[b]))

    window = policy.temporal_window if policy.temporal_window is not None else 2.0 * sigma_t
    timed = sorted((d.timestamp, i) for i, d in enumerate(docs) if d.timestamp is not None)
    lo = 0
    for hi in range(len(timed)):
        while timed[hi][0] - timed[lo][0] > window:
            lo += 1
        for k in range(lo, hi):
            a, b = timed[k][1], timed[hi][1]
            pairs.add((a, b) if a < b else (b, a))
    return sorted(pairs)


def build_email_edges(docs: Sequence[EmailDocument], params: RelationParams,
                      encoder: SemanticEncoder,
                      policy: Optional[CandidatePolicy] = None) -> list[EmailEdge]:
    """Scored email-email edges: max relation > epsilon_r, weight = sum of all four."""
    if len(docs) < 2:
        return []
    policy = policy or CandidatePolicy()
    pairs = _candidate_pairs(docs, policy, params.sigma_t)
    if not pairs:
        return []

    domains = [d.sender_domain for d in docs]
    senders = [d.sender_address for d in docs]
    times = np.array([d.timestamp if d.timestamp is not None else np.nan for d in docs])
    embeds = encoder.encode_texts([_doc_text(d) for d in docs])

    src = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    dst = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))

    dom_eq = np.fromiter(
        (domains[i] is not None and domains[i] == domains[j] for i, j in pairs),
        dtype=np.float64, count=len(pairs))
    snd_eq = np.fromiter(
        (senders[i] is not None and senders[i] == senders[j] for i, j in pairs),
        dtype=np.float64, count=len(pairs))
    dt = np.abs(times[src] - times[dst])
    temporal = np.where(np.isnan(dt), 0.0, np.exp(-np.nan_to_num(dt) / params.sigma_t))
    semantic = np.einsum("ij,ij->i", embeds[src], embeds[dst])

    # Column order mirrors SCORED_RELATIONS; ties pick the first max.
    scores = np.stack([
        dom_eq * params.w_domain,
        temporal * params.w_temporal,
        semantic * params.w_semantic,
        snd_eq * params.w_sender,
    ], axis=1)
    keep = scores.max(axis=1) > params.epsilon_r
    kinds = scores.argmax(axis=1)
    weights = scores.sum(axis=1)

    edges = []
    for k in np.flatnonzero(keep):
        edges.append(EmailEdge(int(src[k]), int(dst[k]),
                               SCORED_RELATIONS[int(kinds[k])], float(weights[k])))
    return edges


class HeteroGraph:
    """Immutable typed graph with array-backed edges and a feature matrix."""

    def __init__(self, nodes: list[Node], edge_src: np.ndarray, edge_dst: np.ndarray,
                 edge_rel: np.ndarray, edge_weight: np.ndarray):
        self.nodes = nodes
        self.edge_src = edge_src
        self.edge_dst = edge_dst
        self.edge_rel = edge_rel
        self.edge_weight = edge_weight
        self.id_to_index = {node.id: i for i, node in enumerate(nodes)}
        self.features = (np.stack([n.feature for n in nodes])
                         if nodes else np.zeros((0, 0)))
        self.kinds = np.array([_KIND_INDEX[n.kind] for n in nodes], dtype=np.int8)
        self.email_indices = np.flatnonzero(self.kinds == 0)
        self._validate()
        self._adj: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None

    def _validate(self):
        if self.edge_src.size:
            if np.any(self.edge_src == self.edge_dst):
                raise ValueError("self-loop in edge list")
            if not np.all(np.isfinite(self.edge_weight)) or np.any(self.edge_weight <= 0):
                raise ValueError("edge weights must be positive and finite")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return int(self.edge_src.size)

    def edges(self) -> list[Edge]:
        out = []
        for s, d, r, w in zip(self.edge_src, self.edge_dst, self.edge_rel, self.edge_weight):
            a, b = self.nodes[int(s)].id, self.nodes[int(d)].id
            if b < a:
                a, b = b, a
            out.append(Edge(a, b, RELATION_KINDS[int(r)], float(w)))
        return out

    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Directed view of the undirected edges: (indptr, neighbor, rel_idx).

        Row v of the CSR layout lists every neighbor u with the relation of
        the (u, v) edge; both directions of each stored edge appear.
        """
        if self._adj is None:
            n = self.n_nodes
            both_src = np.concatenate([self.edge_src, self.edge_dst])
            both_dst = np.concatenate([self.edge_dst, self.edge_src])
            both_rel = np.concatenate([self.edge_rel, self.edge_rel])
            order = np.lexsort((both_src, both_dst))
            nbr = both_src[order]
            rel = both_rel[order]
            counts = np.bincount(both_dst, minlength=n)
            indptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            self._adj = (indptr, nbr.astype(np.int64), rel.astype(np.int64))
        return self._adj

    def neighbors(self, v: int) -> np.ndarray:
        indptr, nbr, _ = self.adjacency()
        return nbr[indptr[v]: indptr[v + 1]]

    def degree_array(self) -> np.ndarray:
        indptr, _, _ = self.adjacency()
        return np.diff(indptr)


def _entity_feature(kind: str, d: int) -> np.ndarray:
    vec = np.zeros(d, dtype=np.float64)
    vec[_KIND_INDEX[kind]] = 1.0
    return vec


def expand_entity_graph(docs: Sequence[EmailDocument], email_edges: Sequence[EmailEdge],
                        features: np.ndarray,
                        entity_classes: Iterable[str] = ("sender", "receiver", "domain",
                                                         "url", "attachment")) -> HeteroGraph:
    """Add entity nodes and schema edges around the email nodes.

    Schema: email-sender/receiver sent_to, email-url linked_to, url-domain
    hosted_on, sender-domain hosted_on, email-attachment contains, and
    email-email replied_to via the In-Reply-To/Message-ID join. Entity
    features are kind one-hots zero-padded to the email feature width.
    `entity_classes` supports the cross-modal masking modes.
    """
    if not docs:
        raise EmptyCorpus("cannot build a graph from no documents")
    if features.shape[0] != len(docs):
        raise ValueError("features rows must match docs")
    d = features.shape[1]
    wanted = set(entity_classes)

    nodes = [Node(id=f"email:{doc.id}", kind="email", feature=features[i],
                  subject=doc.subject, body=doc.body, doc_index=i)
             for i, doc in enumerate(docs)]

    entity_ids: dict[str, tuple[str, str]] = {}

    def want_entity(kind: str, value: str) -> Optional[str]:
        if kind not in wanted or not value:
            return None
        node_id = f"{kind}:{value}"
        entity_ids.setdefault(node_id, (kind, value))
        return node_id

    # (u_id or index, v_id or index, relation) collected symbolically first.
    sym_edges: list[tuple[str, str, str]] = []
    for i, doc in enumerate(docs):
        eid = nodes[i].id
        sid = want_entity("sender", doc.sender_address or "")
        if sid:
            sym_edges.append((eid, sid, "sent_to"))
            did = want_entity("domain", doc.sender_domain or "")
            if did:
                sym_edges.append((sid, did, "hosted_on"))
        for addr in doc.recipient_addresses:
            rid = want_entity("receiver", addr)
            if rid:
                sym_edges.append((eid, rid, "sent_to"))
        for url in doc.urls:
            uid = want_entity("url", url.host)
            if uid:
                sym_edges.append((eid, uid, "linked_to"))
                did = want_entity("domain", url.host)
                if did:
                    sym_edges.append((uid, did, "hosted_on"))
        for att in doc.attachments:
            aid = want_entity("attachment", att.digest)
            if aid:
                sym_edges.append((eid, aid, "contains"))

    by_message_id = {doc.message_id: i for i, doc in enumerate(docs) if doc.message_id}
    replied: list[tuple[int, int]] = []
    for i, doc in enumerate(docs):
        j = by_message_id.get(doc.in_reply_to) if doc.in_reply_to else None
        if j is not None and j != i:
            replied.append((i, j))

    for node_id in sorted(entity_ids):
        kind, value = entity_ids[node_id]
        nodes.append(Node(id=node_id, kind=kind, feature=_entity_feature(kind, d),
                          entity_value=value))

    index = {node.id: i for i, node in enumerate(nodes)}
    seen_pairs: set[tuple[int, int]] = set()
    src, dst, rel, weight = [], [], [], []

    def add_edge(a: int, b: int, kind: str, w: float):
        key = (a, b) if a < b else (b, a)
        if a == b or key in seen_pairs:
            return
        seen_pairs.add(key)
        src.append(a)
        dst.append(b)
        rel.append(REL_INDEX[kind])
        weight.append(w)

    for e in email_edges:
        add_edge(e.u_index, e.v_index, e.relation_kind, e.weight)
    for i, j in replied:
        add_edge(i, j, "replied_to", 1.0)
    for a_id, b_id, kind in sym_edges:
        add_edge(index[a_id], index[b_id], kind, 1.0)

    return HeteroGraph(
        nodes,
        np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
        np.array(rel, dtype=np.int64), np.array(weight, dtype=np.float64),
    )


def build_graph(docs: Sequence[EmailDocument], features: np.ndarray,
                params: RelationParams, encoder: SemanticEncoder,
                policy: Optional[CandidatePolicy] = None,
                entity_classes: Iterable[str] = ("sender", "receiver", "domain",
                                                 "url", "attachment")) -> HeteroGraph:
    """Score email edges then expand entities: the full construction pipeline."""
    email_edges = build_email_edges(docs, params, encoder, policy) if len(docs) > 1 else []
    return expand_entity_graph(docs, email_edges, features, entity_classes)


class ShortestPathOracle:
    """Bounded-hop unweighted BFS distances with per-source memoization.

    Pairs farther than max_hops report max_hops + 1; d(u, u) = 0 and the
    measure is symmetric because the graph is undirected.
    """

    def __init__(self, graph: HeteroGraph, max_hops: int):
        self.graph = graph
        self.max_hops = max_hops
        self._cache: dict[int, dict[int, int]] = {}

    def _distances_from(self, s: int) -> dict[int, int]:
        hit = self._cache.get(s)
        if hit is not None:
            return hit
        dist = {s: 0}
        frontier = [s]
        for hops in range(1, self.max_hops + 1):
            nxt = []
            for v in frontier:
                for u in self.graph.neighbors(v):
                    u = int(u)
                    if u not in dist:
                        dist[u] = hops
                        nxt.append(u)
            frontier = nxt
            if not frontier:
                break
        self._cache[s] = dist
        return dist

    def query(self, u: int, v: int) -> int:
        if u == v:
            return 0
        if u in self._cache:
            return self._cache[u].get(v, self.max_hops + 1)
        return self._distances_from(v).get(u, self.max_hops + 1)


class StructuralStats:
    """PageRank, degrees, bounded shortest paths, and entity co-occurrence.

    Also precomputes the per-adjacency-pair structural and frequency
    salience terms, which are constant across forward passes.
    """

    def __init__(self, graph: HeteroGraph, pagerank: np.ndarray, degree: np.ndarray,
                 shortest_path: ShortestPathOracle, total_count: np.ndarray,
                 cooc_matrix: sp.spmatrix):
        self.graph = graph
        self.pagerank = pagerank
        self.degree = degree
        self.shortest_path = shortest_path
        self.total_count = total_count
        self._cooc = cooc_matrix
        self.max_degree = int(degree.max()) if degree.size else 0

        indptr, nbr, _ = graph.adjacency()
        dst = np.repeat(np.arange(graph.n_nodes), np.diff(indptr))
        denom = max(self.max_degree, 1)
        # Adjacent pairs always sit one hop apart, so the path term is 1/2.
        self.adj_s_struct = pagerank[nbr] + degree[nbr] / denom + 0.5
        tc = total_count.astype(np.float64)
        co = self.co_occurrence_pairs(nbr, dst)
        denom_f = np.sqrt(tc[nbr] * tc[dst])
        self.adj_s_freq = np.divide(co, denom_f, out=np.zeros_like(co),
                                    where=denom_f > 0)

    def co_occurrence(self, u: int, v: int) -> int:
        return int(self._cooc[u, v])

    def co_occurrence_pairs(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        if us.size == 0:
            return np.zeros(0)
        return np.asarray(self._cooc[us, vs]).ravel().astype(np.float64)


def pagerank_scores(graph: HeteroGraph, damping: float = 0.85,
                    tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    n = graph.n_nodes
    if n == 0:
        return np.zeros(0)
    indptr, nbr, _ = graph.adjacency()
    deg = np.diff(indptr).astype(np.float64)
    src = nbr
    dst = np.repeat(np.arange(n), np.diff(indptr))
    inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    p = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        contrib = np.zeros(n)
        np.add.at(contrib, dst, p[src] * inv_deg[src])
        dangling = p[deg == 0].sum()
        nxt = (1.0 - damping) / n + damping * (contrib + dangling / n)
        if np.abs(nxt - p).sum() < tol:
            p = nxt
            break
        p = nxt
    return p / p.sum()


def compute_structural_stats(graph: HeteroGraph, pagerank_damping: float = 0.85,
                             max_hops: int = 3) -> StructuralStats:
    if graph.n_nodes == 0:
        raise EmptyCorpus("cannot compute stats for an empty graph")
    degree = graph.degree_array().astype(np.int64)
    pr = pagerank_scores(graph, pagerank_damping)

    n = graph.n_nodes
    entity_mask = graph.kinds != 0
    indptr, nbr, _ = graph.adjacency()
    dst = np.repeat(np.arange(n), np.diff(indptr))
    is_entity_nbr = entity_mask[nbr]
    rows = dst[is_entity_nbr]
    cols = nbr[is_entity_nbr]
    incidence = sp.csr_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(n, n))
    total_count = np.asarray(incidence.sum(axis=1)).ravel().astype(np.int64)
    cooc = (incidence @ incidence.T).tocsr()

    return StructuralStats(
        graph, pr, degree, ShortestPathOracle(graph, max_hops), total_count, cooc)


# ---------------------------------------------------------------------------
# EVOMAIL-GRAPH v1: node records then edge records, loss-free round-trip.

_KIND = "GRAPH"


def save_graph(path: str | Path, graph: HeteroGraph) -> None:
    lines = [ser.format_header(_KIND)]
    for node in graph.nodes:
        lines.append("N" + ser.json_line({
            "id": node.id, "kind": node.kind,
            "subject": node.subject, "body": node.body,
            "entity_value": node.entity_value, "doc_index": node.doc_index,
            "feature": ser.array_to_b64(node.feature),
            "dim": int(node.feature.size),
        }))
    for edge in graph.edges():
        lines.append("E" + ser.json_line({
            "u": edge.u, "v": edge.v, "relation_kind": edge.relation_kind,
            "weight": edge.weight,
        }))
    ser.atomic_write_text(path, "\n".join(lines) + "\n")


def load_graph(path: str | Path) -> HeteroGraph:
    lines = ser.read_lines(path, _KIND)
    nodes: list[Node] = []
    src, dst, rel, weight = [], [], [], []
    index: dict[str, int] = {}
    for i, line in enumerate(lines, 1):
        tag, payload = line[:1], line[1:]
        rec = ser.parse_json_line(payload, i)
        if tag == "N":
            node = Node(id=rec["id"], kind=rec["kind"],
                        feature=ser.b64_to_array(rec["feature"], (rec["dim"],), i),
                        subject=rec["subject"], body=rec["body"],
                        entity_value=rec["entity_value"], doc_index=rec["doc_index"])
            index[node.id] = len(nodes)
            nodes.append(node)
        elif tag == "E":
            try:
                src.append(index[rec["u"]])
                dst.append(index[rec["v"]])
            except KeyError as exc:
                raise CorruptFile(f"edge references unknown node {exc}", i) from exc
            rel.append(REL_INDEX[rec["relation_kind"]])
            weight.append(rec["weight"])
        else:
            raise CorruptFile(f"unknown record tag {tag!r}", i)
    return HeteroGraph(nodes, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                       np.array(rel, dtype=np.int64), np.array(weight, dtype=np.float64))
