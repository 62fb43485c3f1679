"""Experiment drivers for the three evaluation scenarios, plus report files.

Static: seeded 80/20 split, train, report test metrics. Shift: train on
phase 1, incremental updates on phases 2-3 with no revisits and a
template-granularity novel holdout; reports per-phase AUC, novel-attack
F1, the P1-P3 AUC drop, and the evidence-path STC across phase
checkpoints. Cross-modal: the static protocol under feature/entity
masking. Reports are written atomically in the EVOMAIL-REPORT format with
wall-clock fields stripped, so identical config+seed gives identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _serialize as ser
from .config import PipelineConfig
from .documents import EmailDocument
from .errors import CorruptFile, EmptyCorpus
from .explain import extract_evidence_path
from .graph import build_graph, compute_structural_stats
from .metrics import MetricsReport, classification_metrics, f1_score, stc_metric
from .network import forward
from .pipeline import (ENTITY_CLASSES_BY_MODALITY, DetectorState, continue_pipeline,
                       make_encoder, mask_modality, score_documents, split_corpus,
                       train_pipeline)
from .synth import template_id_of

_REPORT_KIND = "REPORT"


def _strip_history(history: Sequence[dict]) -> list[dict]:
    return [{k: v for k, v in row.items() if k != "update_seconds"}
            for row in history]


def run_static(docs: Sequence[EmailDocument], cfg: PipelineConfig,
               modality: str = "full_graph") -> dict:
    """80/20 split, train on the big side, metrics on the held-out side."""
    docs = list(docs)
    train_docs, test_docs = split_corpus(docs, 0.2, cfg.seed)
    if not test_docs:
        raise EmptyCorpus("corpus too small for an 80/20 split")
    state = train_pipeline(train_docs, cfg, modality=modality)
    scores = score_documents(state, test_docs)
    labels = np.array([d.label for d in test_docs])
    metrics = classification_metrics(scores, labels, cfg.threshold, cfg.ks())
    return {
        "scenario": "static" if modality == "full_graph" else "crossmodal",
        "modality": modality,
        "config": cfg.as_dict(),
        "metrics": metrics.as_dict(),
        "history": _strip_history(state.history),
        "n_train": len(train_docs),
        "n_test": len(test_docs),
        "_state": state,
    }


def run_cross_modal(docs: Sequence[EmailDocument], cfg: PipelineConfig,
                    modality: str) -> dict:
    if modality not in ENTITY_CLASSES_BY_MODALITY:
        raise ValueError(f"unknown modality {modality!r}")
    return run_static(docs, cfg, modality=modality)


def _phase_auc(state: DetectorState, test_docs: Sequence[EmailDocument],
               threshold: float) -> tuple[float, np.ndarray]:
    scores = score_documents(state, test_docs)
    labels = np.array([d.label for d in test_docs])
    report = classification_metrics(scores, labels, threshold)
    return report.auc, scores


def _campaign_paths(state: DetectorState, probes: dict[str, EmailDocument]) -> dict:
    """Evidence path per campaign id for a fixed probe set, one graph pass."""
    if not probes:
        return {}
    cfg = state.config
    docs = list(probes.values())
    combined = list(state.context_docs) + docs
    encoder = make_encoder(cfg)
    X = mask_modality(state.featurizer.transform(combined), state.featurizer,
                      state.modality)
    graph = build_graph(combined, X, cfg.relation_params(), encoder,
                        cfg.candidate_policy_obj(),
                        ENTITY_CLASSES_BY_MODALITY[state.modality])
    stats = compute_structural_stats(graph, cfg.pagerank_damping, cfg.max_hops)
    trace = forward(graph, stats, state.model, encoder)
    out = {}
    for campaign, doc in probes.items():
        v = graph.id_to_index[f"email:{doc.id}"]
        out[campaign] = extract_evidence_path(v, trace, graph, cfg.d_max,
                                              cfg.alpha_min)
    return out


def split_novel_templates(p3_docs: Sequence[EmailDocument], novel_fraction: float,
                          seed: int) -> tuple[list[str], list[EmailDocument],
                                              list[EmailDocument]]:
    """Hold out floor(fraction * |templates|) P3 spam templates entirely."""
    templates = sorted({template_id_of(d.id) for d in p3_docs if d.label == 1})
    n_hold = int(np.floor(novel_fraction * len(templates)))
    rng = np.random.default_rng([seed, 0x0E1])
    held = sorted(rng.choice(templates, size=n_hold, replace=False)) if n_hold else []
    held_set = set(held)
    novel = [d for d in p3_docs if d.label == 1 and template_id_of(d.id) in held_set]
    rest = [d for d in p3_docs if d not in novel]
    return list(held), novel, rest


def run_shift(phase_corpora: Sequence[Sequence[EmailDocument]], cfg: PipelineConfig,
              novel_fraction: Optional[float] = None) -> dict:
    """Train on P1, update on P2 then P3 (no revisits), report AUC trajectory,
    Delta = AUC_P1 - AUC_P3, F1 on never-trained novel P3 templates, and STC."""
    if len(phase_corpora) != 3:
        raise EmptyCorpus("shift protocol needs exactly three phase corpora")
    novel_fraction = cfg.novel_fraction if novel_fraction is None else novel_fraction
    p1, p2, p3 = (list(c) for c in phase_corpora)

    held_templates, novel_docs, p3_rest = split_novel_templates(
        p3, novel_fraction, cfg.seed)

    splits = {}
    for name, corpus in (("P1", p1), ("P2", p2), ("P3", p3_rest)):
        splits[name] = split_corpus(corpus, 0.2, cfg.seed)

    state = train_pipeline(splits["P1"][0], cfg)

    # fixed campaign probes for STC: one P1 test spam per template
    probes: dict[str, EmailDocument] = {}
    for doc in splits["P1"][1]:
        if doc.label == 1:
            probes.setdefault(template_id_of(doc.id), doc)

    aucs, checkpoints = {}, []
    aucs["P1"], _ = _phase_auc(state, splits["P1"][1], cfg.threshold)
    checkpoints.append(_campaign_paths(state, probes))

    continue_pipeline(state, splits["P2"][0], cfg.update_iters)
    aucs["P2"], _ = _phase_auc(state, splits["P2"][1], cfg.threshold)
    checkpoints.append(_campaign_paths(state, probes))

    continue_pipeline(state, splits["P3"][0], cfg.update_iters)
    aucs["P3"], _ = _phase_auc(state, splits["P3"][1], cfg.threshold)
    checkpoints.append(_campaign_paths(state, probes))

    # F1 on never-updated novel templates, against the P3 test hams
    novel_f1 = None
    if novel_docs:
        ham_test = [d for d in splits["P3"][1] if d.label == 0]
        eval_docs = novel_docs + ham_test
        scores = score_documents(state, eval_docs)
        labels = np.array([d.label for d in eval_docs])
        novel_f1 = f1_score(labels, (scores >= cfg.threshold).astype(int))

    return {
        "scenario": "shift",
        "config": cfg.as_dict(),
        "auc": aucs,
        "delta": aucs["P1"] - aucs["P3"],
        "novel_templates": held_templates,
        "novel_f1": novel_f1,
        "stc": stc_metric(checkpoints) if len(checkpoints) >= 2 else None,
        "history": _strip_history(state.history),
        "_state": state,
    }


# ---------------------------------------------------------------------------
# EVOMAIL-REPORT v1

def write_report(path: str | Path, payload: dict) -> None:
    record = {k: v for k, v in payload.items() if not k.startswith("_")}
    lines = [ser.format_header(_REPORT_KIND), ser.json_line(record)]
    ser.atomic_write_text(path, "\n".join(lines) + "\n")


def read_report(path: str | Path) -> dict:
    lines = ser.read_lines(path, _REPORT_KIND)
    if not lines:
        raise CorruptFile("missing report record", 1)
    return ser.parse_json_line(lines[0], 1)


def render_metrics_table(metrics: dict) -> str:
    """Human-readable fixed-width table for CLI output."""
    rows = [("accuracy", metrics["accuracy"]), ("precision", metrics["precision"]),
            ("recall", metrics["recall"]), ("f1", metrics["f1"]),
            ("auc", metrics["auc"])]
    for k, v in sorted(metrics.get("precision_at_k", {}).items(), key=lambda kv: int(kv[0])):
        rows.append((f"precision@{k}", v))
    if "stc" in metrics:
        rows.append(("stc", metrics["stc"]))
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value:.4f}" for name, value in rows)


def render_history_csv(history: Sequence[dict]) -> str:
    """CSV-like training history: iteration, losses, F1, memory, reward."""
    cols = ["iteration", "loss_task", "loss_cons", "loss_adv", "loss_reg",
            "loss_total", "holdout_f1", "memory_size", "mean_reward"]
    lines = [",".join(cols)]
    for row in history:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append("" if v is None else
                         (f"{v:.6f}" if isinstance(v, float) else str(v)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
