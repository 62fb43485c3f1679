"""Command line interface.

Subcommands: ingest, gen-synthetic, train, evolve, detect, explain, eval.
Corpora load from EVOMAIL-FEATURES files, mbox files, .eml files, or
directories of either. Trained detectors live in a state directory
written by `train --out-model`.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import _serialize as ser
from .config import PipelineConfig, load_config
from .errors import EvomailError
from .experiments import (read_report, render_history_csv, render_metrics_table,
                          run_cross_modal, run_shift, run_static, write_report)
from .features import EmailFeaturizer, load_features, save_features
from .parser import load_paths
from .pipeline import (continue_pipeline, explain_documents, load_state,
                       save_state, score_documents, train_pipeline)
from .synth import PhaseSpec, generate_phase_corpus, write_mbox


def _load_corpus(path: str):
    p = Path(path)
    if p.is_file():
        with open(p, "rb") as fh:
            head = fh.read(64)
        if head.startswith(b"EVOMAIL-FEATURES"):
            docs, _, _ = load_features(p)
            return docs
    return load_paths([p])


def _cmd_ingest(args) -> int:
    docs = load_paths(args.paths)
    featurizer = EmailFeaturizer(vocab_cap=args.vocab_cap,
                                 reputation_path=args.reputation or None)
    featurizer.fit(docs)
    save_features(args.out, docs, featurizer)
    print(f"ingested {len(docs)} documents -> {args.out} "
          f"(d={featurizer.n_features_})")
    return 0


def _cmd_gen_synthetic(args) -> int:
    spec = PhaseSpec(phase=args.phase, n_emails=args.n, spam_ratio=args.ratio,
                     seed=args.seed)
    n = write_mbox(args.out, spec)
    print(f"wrote {n} {args.phase} messages -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    docs = _load_corpus(args.corpus)
    state = train_pipeline(docs, cfg)
    save_state(state, args.out_model)
    sys.stdout.write(render_history_csv(state.history))
    print(f"saved state -> {args.out_model}")
    return 0


def _cmd_evolve(args) -> int:
    state = load_state(args.state)
    if args.config:
        from .pipeline import DetectorState
        state = DetectorState(config=load_config(args.config),
                              featurizer=state.featurizer, model=state.model,
                              memory=state.memory,
                              context_docs=state.context_docs,
                              history=state.history, modality=state.modality)
    docs = _load_corpus(args.corpus)
    continue_pipeline(state, docs, args.iters)
    save_state(state, args.state)
    sys.stdout.write(render_history_csv(state.history[-args.iters:]))
    print(f"updated state -> {args.state}")
    return 0


def _cmd_detect(args) -> int:
    state = load_state(args.model)
    docs = _load_corpus(args.input)
    scores = score_documents(state, docs)
    threshold = state.config.threshold
    records = [{"id": d.id, "score": float(s),
                "verdict": "spam" if s >= threshold else "ham"}
               for d, s in zip(docs, scores)]
    if args.report:
        write_report(args.report, {"scenario": "detect",
                                   "threshold": threshold,
                                   "results": records})
    for r in records:
        print(f"{r['id']}\t{r['score']:.4f}\t{r['verdict']}")
    return 0


def _cmd_explain(args) -> int:
    state = load_state(args.model)
    docs = _load_corpus(args.input)
    text, path, attrs, score = explain_documents(state, docs, args.email_id)
    print(text)
    if args.report:
        write_report(args.report, {
            "scenario": "explain", "email_id": args.email_id,
            "score": float(score),
            "path": [{"node_id": s.node_id, "node_kind": s.node_kind,
                      "relation": s.relation_to_previous,
                      "confidence": s.confidence} for s in path.steps],
            "terminated_by": path.terminated_by,
            "attributions": [{"index": a.feature_index, "name": a.feature_name,
                              "importance": a.importance} for a in attrs],
        })
    return 0


def _synthetic_phases(cfg: PipelineConfig, n: int):
    return [generate_phase_corpus(PhaseSpec(p, n, 0.5, cfg.seed))
            for p in ("P1", "P2", "P3")]


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if args.scenario == "shift":
        if args.corpus and len(args.corpus) == 3:
            corpora = [_load_corpus(c) for c in args.corpus]
        else:
            corpora = _synthetic_phases(cfg, args.synthetic_n)
        payload = run_shift(corpora, cfg)
        print(f"AUC P1={payload['auc']['P1']:.4f} P2={payload['auc']['P2']:.4f} "
              f"P3={payload['auc']['P3']:.4f} delta={payload['delta']:.4f}")
        if payload["novel_f1"] is not None:
            print(f"novel-template F1: {payload['novel_f1']:.4f}")
        if payload["stc"] is not None:
            print(f"stc: {payload['stc']:.4f}")
    else:
        if args.corpus:
            docs = _load_corpus(args.corpus[0])
        else:
            docs = generate_phase_corpus(
                PhaseSpec("P1", args.synthetic_n, 0.5, cfg.seed))
        if args.scenario == "static":
            payload = run_static(docs, cfg)
        else:
            payload = run_cross_modal(docs, cfg, args.modality)
        print(render_metrics_table(payload["metrics"]))
    if args.out:
        write_report(args.out, payload)
        print(f"report -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evomail",
        description="Self-evolving heterogeneous-graph spam detector")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse mail and write a features file")
    p.add_argument("paths", nargs="+")
    p.add_argument("--vocab-cap", type=int, default=2000)
    p.add_argument("--reputation", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("gen-synthetic", help="write a synthetic phase mbox")
    p.add_argument("--phase", choices=["P1", "P2", "P3"], required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("train", help="train a detector state directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out-model", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evolve", help="incremental updates on a new corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--state", required=True)
    p.set_defaults(func=_cmd_evolve)

    p = sub.add_parser("detect", help="score a corpus with a trained state")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("explain", help="evidence path for one email")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--email-id", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("eval", help="run an evaluation scenario")
    p.add_argument("--scenario", choices=["static", "shift", "crossmodal"],
                   required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", nargs="*", default=None)
    p.add_argument("--synthetic-n", type=int, default=1000)
    p.add_argument("--modality", default="full_graph",
                   choices=["text_only", "text_meta", "full_graph"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EvomailError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
