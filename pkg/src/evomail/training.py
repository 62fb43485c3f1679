"""The red-blue self-evolution loop and its four-term training objective.

Each iteration, in order: score the corpus, let the red team generate
adversarial candidates, harvest scoring failures, compress them with
k-medoids into the LRU experience memory, then take one gradient step on

    L_total = L_task + lambda*L_cons + mu*L_adv + nu*L_reg

where L_task is summed BCE over the labeled graph, L_cons replays memory
entries against their cached scores, L_adv pushes adversarial samples up
and a matched benign sample down, and L_reg is the squared norm of the
weight matrices. Plain gradient descent with an optional global-norm clip.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .documents import EmailDocument
from .encoder import SemanticEncoder
from .errors import DivergenceDetected, EmptyCorpus, NonFiniteLoss
from .features import EmailFeaturizer, Vocabulary
from .graph import HeteroGraph, StructuralStats
from .memory import (ExperienceMemory, TraceSummary, kmedoids_compress,
                     sample_distance, update_memory)
from .metrics import f1_score
from .model import WEIGHT_MATRIX_NAMES, ModelState
from .network import Gradients, backward, backward_vectors, forward, forward_vectors
from .redteam import AdversarialSample, generate_adversarial_batch, score_vectors

SCORE_CLAMP = 1e-7


@dataclass
class EvolutionConfig:
    """Knobs of the adversarial self-evolution loop."""

    epsilon: float = 0.05            # FGSM magnitude
    rho_mut: float = 0.15            # semantic mutation rate
    lambda_hybrid: float = 0.5
    w_novelty: float = 0.4
    w_evasion: float = 0.4
    w_complexity: float = 0.2
    novelty_cap: float = 10.0
    delta_fail: float = 0.5
    m_max: int = 256
    alpha_trace: float = 1.0
    batch_size: int = 16             # adversarial batch M_t
    lambda_cons: float = 0.5
    mu_adv: float = 0.5
    nu_reg: float = 1e-4
    eta: float = 0.05
    iterations: int = 10
    seed: int = 0
    direction: str = "evade"
    red_seeds: int = 64
    grad_clip: float = 0.5
    homograph_families: tuple = ()

    def validate(self):
        w = (self.w_novelty, self.w_evasion, self.w_complexity)
        if min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError("reward weights must be nonnegative and sum to 1")
        if not 0.0 < self.delta_fail < 1.0:
            raise ValueError("delta_fail must lie in (0, 1)")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if not 0.0 <= self.rho_mut <= 1.0:
            raise ValueError("rho_mut must be in [0, 1]")


@dataclass
class LossReport:
    task: float
    cons: float
    adv: float
    reg: float
    total: float
    lam: float
    mu: float
    nu: float


@dataclass
class EvolutionContext:
    """Everything an evolution iteration reads; built once per corpus."""

    docs: list[EmailDocument]
    features: np.ndarray
    graph: HeteroGraph
    stats: StructuralStats
    labels: np.ndarray            # per email node; -1 marks unlabeled
    featurizer: EmailFeaturizer
    encoder: SemanticEncoder
    eval_graph: Optional[HeteroGraph] = None
    eval_stats: Optional[StructuralStats] = None
    eval_positions: Optional[np.ndarray] = None   # holdout rows in eval scores
    eval_labels: Optional[np.ndarray] = None

    @property
    def vocab(self) -> Vocabulary:
        return self.featurizer.vocabulary_

    def spam_doc_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)


def bce_terms(scores: np.ndarray, targets: np.ndarray
              ) -> tuple[float, np.ndarray]:
    """Summed BCE with clamped logs and its derivative w.r.t. the raw scores."""
    p = np.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    loss = float(-(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)).sum())
    inside = (scores > SCORE_CLAMP) & (scores < 1.0 - SCORE_CLAMP)
    dscore = np.where(inside, -targets / p + (1.0 - targets) / (1.0 - p), 0.0)
    return loss, dscore


def detect_failures(batch: Sequence[AdversarialSample], model: ModelState,
                    delta_fail: float) -> list[AdversarialSample]:
    """Samples the model scores under the failure threshold despite being spam."""
    if not batch:
        return []
    scores = score_vectors(np.stack([s.perturbed_features for s in batch]), model)
    return [s for s, f in zip(batch, scores)
            if f < delta_fail and s.ground_truth == 1]


@dataclass
class _FailureItem:
    features: np.ndarray
    trace: Optional[TraceSummary]
    score: float


def compute_losses(model: ModelState, ctx: EvolutionContext,
                   memory: ExperienceMemory,
                   adversarial: Sequence[AdversarialSample],
                   benign_positions: np.ndarray,
                   lam: float, mu: float, nu: float, iteration: int = 0,
                   training: bool = False,
                   rng: Optional[np.random.Generator] = None
                   ) -> tuple[LossReport, Gradients]:
    """Evaluate L_total and its exact gradient in one combined backward set."""
    trace = forward(ctx.graph, ctx.stats, model, ctx.encoder,
                    training=training, rng=rng)
    labeled = ctx.labels >= 0
    y = np.where(labeled, ctx.labels, 0).astype(np.float64)
    _, task_d = bce_terms(trace.scores, y)
    task_loss = float(_bce_per_example(trace.scores, y)[labeled].sum())
    dscore_graph = np.where(labeled, task_d, 0.0)

    # benign half of L_adv: -sum log(1 - f(benign)) over graph-scored hams
    adv_loss = 0.0
    if benign_positions.size:
        pb = trace.scores[benign_positions]
        lb, db = bce_terms(pb, np.zeros_like(pb))
        adv_loss += lb
        dscore_graph[benign_positions] += mu * db

    grads = backward(trace, ctx.graph, model, dscore_graph)

    cons_loss = 0.0
    if len(memory):
        Xm = memory.feature_matrix()
        vt = forward_vectors(Xm, model)
        targets = np.array([e.cached_score for e in memory.entries])
        cons_loss, dm = bce_terms(vt.scores, targets)
        grads.add_(backward_vectors(vt, model, lam * dm, Xm))
        memory.touch_all(iteration)

    if adversarial:
        Xa = np.stack([s.perturbed_features for s in adversarial])
        va = forward_vectors(Xa, model)
        la, da = bce_terms(va.scores, np.ones(len(adversarial)))
        adv_loss += la
        grads.add_(backward_vectors(va, model, mu * da, Xa))

    reg_loss = model.weight_squared_norm()
    for name in WEIGHT_MATRIX_NAMES:
        grads.params[name] += nu * 2.0 * model.params[name]

    total = task_loss + lam * cons_loss + mu * adv_loss + nu * reg_loss
    if not np.isfinite(total):
        raise NonFiniteLoss(f"task={task_loss} cons={cons_loss} "
                            f"adv={adv_loss} reg={reg_loss}")
    report = LossReport(task_loss, cons_loss, adv_loss, reg_loss, total,
                        lam, mu, nu)
    return report, grads


def _bce_per_example(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    p = np.clip(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    return -(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p))


def _clip_gradients(grads: Gradients, max_norm: float) -> None:
    if max_norm <= 0:
        return
    total = np.sqrt(sum(float((g ** 2).sum()) for g in grads.params.values()))
    if total > max_norm:
        scale = max_norm / total
        for name in grads.params:
            grads.params[name] *= scale


def holdout_f1(ctx: EvolutionContext, model: ModelState,
               threshold: float = 0.5) -> Optional[float]:
    if ctx.eval_graph is None:
        return None
    trace = forward(ctx.eval_graph, ctx.eval_stats, model, ctx.encoder)
    scores = trace.scores[ctx.eval_positions]
    preds = (scores >= threshold).astype(int)
    return f1_score(ctx.eval_labels, preds)


def run_evolution(ctx: EvolutionContext, model: ModelState,
                  memory: ExperienceMemory, cfg: EvolutionConfig,
                  iterations: Optional[int] = None,
                  history: Optional[list] = None,
                  start_iteration: int = 0) -> list[dict]:
    """Algorithm loop: forward, red generate, blue failures, compress+store,
    parameter step; one history row per iteration."""
    cfg.validate()
    history = history if history is not None else []
    iters = cfg.iterations if iterations is None else iterations
    email_nodes = ctx.graph.email_indices
    ham_positions = np.flatnonzero(ctx.labels == 0)
    spam_docs = ctx.spam_doc_indices()

    for step in range(iters):
        t = start_iteration + step + 1
        tick = time.perf_counter()
        rng_iter = np.random.default_rng([cfg.seed, 0xE70, t])

        # red team
        if spam_docs.size:
            take = min(cfg.red_seeds, spam_docs.size)
            chosen = np.sort(rng_iter.choice(spam_docs, size=take, replace=False))
            seeds = [ctx.docs[i] for i in chosen]
            batch = generate_adversarial_batch(
                seeds, ctx.features[chosen], model, memory, ctx.vocab,
                ctx.featurizer, cfg, rng_seed=int(rng_iter.integers(0, 2 ** 31)))
        else:
            batch = []

        # blue team failures -> compressed memory entries
        failures = detect_failures(batch, model, cfg.delta_fail)
        k_t = min(len(failures), cfg.m_max - len(memory))
        if k_t > 0:
            f_scores = score_vectors(
                np.stack([s.perturbed_features for s in failures]), model)
            items = [_FailureItem(s.perturbed_features,
                                  TraceSummary(path_kinds=["email"],
                                               confidences=[0.0]),
                                  float(f_scores[j]))
                     for j, s in enumerate(failures)]
            medoids = kmedoids_compress(
                items, k_t,
                lambda a, b: sample_distance(a, b, cfg.alpha_trace),
                rng_seed=int(rng_iter.integers(0, 2 ** 31)))
            update_memory(memory,
                          [(m.features, m.score, m.trace) for m in medoids],
                          cfg.m_max, t)

        # benign set for L_adv: seeded ham subset matching |A_t|
        if batch and ham_positions.size:
            k = min(len(batch), ham_positions.size)
            benign = np.sort(rng_iter.choice(ham_positions, size=k, replace=False))
        else:
            benign = np.zeros(0, dtype=np.int64)

        # parameter step
        drop_rng = np.random.default_rng([cfg.seed, 0xD20, t])
        report, grads = compute_losses(
            model, ctx, memory, batch, benign, cfg.lambda_cons, cfg.mu_adv,
            cfg.nu_reg, iteration=t, training=True, rng=drop_rng)
        if not np.isfinite(report.total):
            raise DivergenceDetected(f"loss diverged at iteration {t}")
        _clip_gradients(grads, cfg.grad_clip)
        if cfg.eta:
            for name in model.params:
                model.params[name] -= cfg.eta * grads.params[name]
        try:
            model.check_finite()
        except ValueError as exc:
            raise DivergenceDetected(str(exc)) from exc

        rewards = [s.reward_parts.get("reward", 0.0) for s in batch]
        history.append({
            "iteration": t,
            "loss_task": report.task,
            "loss_cons": report.cons,
            "loss_adv": report.adv,
            "loss_reg": report.reg,
            "loss_total": report.total,
            "holdout_f1": holdout_f1(ctx, model),
            "memory_size": len(memory),
            "mean_reward": float(np.mean(rewards)) if rewards else 0.0,
            # wall-clock stand-in for update latency; kept out of report files
            "update_seconds": time.perf_counter() - tick,
        })
    return history


def make_labels(graph: HeteroGraph, docs: Sequence[EmailDocument]) -> np.ndarray:
    """Per-email-node label array aligned with graph.email_indices; -1 unlabeled."""
    labels = np.full(graph.email_indices.size, -1, dtype=np.int64)
    for pos, node_idx in enumerate(graph.email_indices):
        di = graph.nodes[int(node_idx)].doc_index
        if di is not None and docs[di].label is not None:
            labels[pos] = docs[di].label
    return labels


def require_both_classes(docs: Sequence[EmailDocument]):
    labels = {d.label for d in docs if d.label is not None}
    if not {0, 1} <= labels:
        raise EmptyCorpus("training corpus needs both ham and spam labels")
