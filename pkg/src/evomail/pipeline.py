"""End-to-end orchestration: featurize, build graphs, run the evolution
loop, score new mail against the trained context, explain, and persist the
whole detector state to a directory.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _serialize as ser
from .config import PipelineConfig
from .documents import EmailDocument
from .encoder import SemanticEncoder
from .errors import CorruptFile, EmptyCorpus
from .explain import EvidencePath, FeatureAttribution, explain_node
from .features import (EmailFeaturizer, featurizer_from_state, featurizer_state,
                       load_features, save_features)
from .graph import HeteroGraph, build_graph, compute_structural_stats
from .memory import ExperienceMemory, load_memory, save_memory
from .model import ModelState, init_model, load_model, save_model
from .network import forward
from .training import (EvolutionContext, make_labels, require_both_classes,
                       run_evolution)

ENTITY_CLASSES_BY_MODALITY = {
    "full_graph": ("sender", "receiver", "domain", "url", "attachment"),
    "text_meta": ("sender", "receiver", "domain"),
    "text_only": (),
}


def make_encoder(cfg: PipelineConfig) -> SemanticEncoder:
    return SemanticEncoder(**cfg.encoder_settings())


def split_corpus(docs: Sequence[EmailDocument], holdout_fraction: float,
                 seed: int) -> tuple[list[EmailDocument], list[EmailDocument]]:
    """Deterministic stratified split; the second part is the holdout."""
    rng = np.random.default_rng([seed, 0x5717])
    train_idx, hold_idx = [], []
    labels = np.array([-1 if d.label is None else d.label for d in docs])
    for cls in (0, 1, -1):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            continue
        perm = rng.permutation(members)
        n_hold = int(round(holdout_fraction * members.size))
        if 0 < holdout_fraction and n_hold == 0 and members.size > 1:
            n_hold = 1
        hold_idx.extend(perm[:n_hold])
        train_idx.extend(perm[n_hold:])
    train_idx.sort()
    hold_idx.sort()
    return [docs[i] for i in train_idx], [docs[i] for i in hold_idx]


def mask_modality(X: np.ndarray, featurizer: EmailFeaturizer, modality: str) -> np.ndarray:
    if modality == "text_only":
        X = X.copy()
        X[:, 2 * len(featurizer.vocabulary_):] = 0.0
    return X


def build_context(docs: Sequence[EmailDocument], featurizer: EmailFeaturizer,
                  cfg: PipelineConfig, encoder: SemanticEncoder,
                  holdout: Sequence[EmailDocument] = (),
                  modality: str = "full_graph") -> EvolutionContext:
    """Training context over `docs`, plus an eval graph including `holdout`."""
    docs = list(docs)
    if not docs:
        raise EmptyCorpus("no documents to build a context from")
    entity_classes = ENTITY_CLASSES_BY_MODALITY[modality]
    X = mask_modality(featurizer.transform(docs), featurizer, modality)
    graph = build_graph(docs, X, cfg.relation_params(), encoder,
                        cfg.candidate_policy_obj(), entity_classes)
    stats = compute_structural_stats(graph, cfg.pagerank_damping, cfg.max_hops)
    ctx = EvolutionContext(docs=docs, features=X, graph=graph, stats=stats,
                           labels=make_labels(graph, docs),
                           featurizer=featurizer, encoder=encoder)
    if holdout:
        all_docs = docs + list(holdout)
        Xa = mask_modality(featurizer.transform(all_docs), featurizer, modality)
        eval_graph = build_graph(all_docs, Xa, cfg.relation_params(), encoder,
                                 cfg.candidate_policy_obj(), entity_classes)
        ctx.eval_graph = eval_graph
        ctx.eval_stats = compute_structural_stats(
            eval_graph, cfg.pagerank_damping, cfg.max_hops)
        positions, labels = [], []
        doc_pos = {id(d): p for p, d in enumerate(all_docs)}
        hold_set = {id(d) for d in holdout}
        for pos, node_idx in enumerate(eval_graph.email_indices):
            di = eval_graph.nodes[int(node_idx)].doc_index
            if di is not None and id(all_docs[di]) in hold_set:
                if all_docs[di].label is not None:
                    positions.append(pos)
                    labels.append(all_docs[di].label)
        ctx.eval_positions = np.array(positions, dtype=np.int64)
        ctx.eval_labels = np.array(labels, dtype=np.int64)
    return ctx


@dataclass
class DetectorState:
    """A trained detector: featurizer, model, memory, config, and the
    training documents kept as graph context for scoring new mail."""

    config: PipelineConfig
    featurizer: EmailFeaturizer
    model: ModelState
    memory: ExperienceMemory
    context_docs: list[EmailDocument]
    history: list[dict]
    modality: str = "full_graph"

    def encoder(self) -> SemanticEncoder:
        return make_encoder(self.config)


def train_pipeline(docs: Sequence[EmailDocument], cfg: PipelineConfig,
                   iterations: Optional[int] = None,
                   modality: str = "full_graph") -> DetectorState:
    """Fit the featurizer, build graphs, and run the evolution loop."""
    docs = list(docs)
    require_both_classes(docs)
    train_docs, holdout_docs = split_corpus(docs, cfg.holdout_fraction, cfg.seed)
    if not train_docs:
        raise EmptyCorpus("holdout fraction left no training documents")
    featurizer = EmailFeaturizer(
        vocab_cap=cfg.vocab_cap,
        reputation_path=cfg.reputation_path or None).fit(train_docs)
    encoder = make_encoder(cfg)
    ctx = build_context(train_docs, featurizer, cfg, encoder,
                        holdout=holdout_docs, modality=modality)
    model = init_model(cfg.model_hyper(featurizer.n_features_), seed=cfg.seed)
    memory = ExperienceMemory(cfg.memory_capacity)
    history: list[dict] = []
    run_evolution(ctx, model, memory, cfg.evolution(),
                  iterations=iterations, history=history)
    return DetectorState(config=cfg, featurizer=featurizer, model=model,
                         memory=memory, context_docs=docs, history=history,
                         modality=modality)


def continue_pipeline(state: DetectorState, new_docs: Sequence[EmailDocument],
                      iterations: int) -> DetectorState:
    """Incremental evolution on a new batch only (no revisiting old phases)."""
    new_docs = list(new_docs)
    require_both_classes(new_docs)
    encoder = state.encoder()
    ctx = build_context(new_docs, state.featurizer, state.config, encoder,
                        modality=state.modality)
    evo = state.config.evolution()
    start = len(state.history)
    run_evolution(ctx, state.model, state.memory, evo, iterations=iterations,
                  history=state.history, start_iteration=start)
    state.context_docs = new_docs
    return state


def _dedupe_against(context: Sequence[EmailDocument],
                    incoming: Sequence[EmailDocument]) -> list[EmailDocument]:
    taken = {d.id for d in context}
    out = []
    for doc in incoming:
        if doc.id in taken:
            doc = dataclasses.replace(doc)
            k = 1
            while f"{doc.id}~{k}" in taken:
                k += 1
            doc.id = f"{doc.id}~{k}"
        taken.add(doc.id)
        out.append(doc)
    return out


def score_documents(state: DetectorState, docs: Sequence[EmailDocument]
                    ) -> np.ndarray:
    """Scores for `docs`, computed on a graph over training context + docs."""
    docs = _dedupe_against(state.context_docs, docs)
    if not docs:
        return np.zeros(0)
    combined = list(state.context_docs) + docs
    encoder = state.encoder()
    cfg = state.config
    X = mask_modality(state.featurizer.transform(combined), state.featurizer,
                      state.modality)
    graph = build_graph(combined, X, cfg.relation_params(), encoder,
                        cfg.candidate_policy_obj(),
                        ENTITY_CLASSES_BY_MODALITY[state.modality])
    stats = compute_structural_stats(graph, cfg.pagerank_damping, cfg.max_hops)
    trace = forward(graph, stats, state.model, encoder)
    n_ctx = len(state.context_docs)
    scores = np.full(len(docs), np.nan)
    for pos, node_idx in enumerate(graph.email_indices):
        di = graph.nodes[int(node_idx)].doc_index
        if di is not None and di >= n_ctx:
            scores[di - n_ctx] = trace.scores[pos]
    return scores


def explain_documents(state: DetectorState, docs: Sequence[EmailDocument],
                      email_id: str) -> tuple[str, EvidencePath,
                                              list[FeatureAttribution], float]:
    """Evidence path, attributions, and rendered text for one email by id."""
    docs = _dedupe_against(state.context_docs, docs)
    combined = list(state.context_docs) + list(docs)
    encoder = state.encoder()
    cfg = state.config
    X = mask_modality(state.featurizer.transform(combined), state.featurizer,
                      state.modality)
    graph = build_graph(combined, X, cfg.relation_params(), encoder,
                        cfg.candidate_policy_obj(),
                        ENTITY_CLASSES_BY_MODALITY[state.modality])
    stats = compute_structural_stats(graph, cfg.pagerank_damping, cfg.max_hops)
    trace = forward(graph, stats, state.model, encoder)
    node_id = f"email:{email_id}"
    if node_id not in graph.id_to_index:
        raise KeyError(f"no email with id {email_id!r}")
    v = graph.id_to_index[node_id]
    text, path, attrs = explain_node(
        v, trace, graph, state.model, state.featurizer.feature_names(),
        d_max=cfg.d_max, alpha_min=cfg.alpha_min, k_feat=cfg.k_feat)
    return text, path, attrs, trace.score_of(v)


# ---------------------------------------------------------------------------
# State directory: model + memory in their own versioned formats, plus the
# featurizer/config/context bundle.

def save_state(state: DetectorState, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_model(path / "model.evomail", state.model)
    save_memory(path / "memory.evomail", state.memory)
    save_features(path / "context.evomail", state.context_docs, state.featurizer)
    bundle = {
        "config": state.config.as_dict(),
        "modality": state.modality,
        "history": state.history,
        "featurizer": featurizer_state(state.featurizer),
    }
    ser.atomic_write_text(path / "pipeline.json",
                          json.dumps(bundle, sort_keys=True, indent=1))


def load_state(path: str | Path) -> DetectorState:
    path = Path(path)
    try:
        bundle = json.loads((path / "pipeline.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"unreadable pipeline bundle: {exc}", 0) from exc
    cfg = PipelineConfig(**bundle["config"])
    featurizer = featurizer_from_state(bundle["featurizer"])
    model = load_model(path / "model.evomail")
    memory = load_memory(path / "memory.evomail")
    docs, _, _ = load_features(path / "context.evomail")
    return DetectorState(config=cfg, featurizer=featurizer, model=model,
                         memory=memory, context_docs=docs,
                         history=bundle["history"], modality=bundle["modality"])
