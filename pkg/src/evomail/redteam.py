"""Red-team adversarial sample generation and the multi-objective reward.

Three generators share one seed email: a feature-space FGSM step, a
text-space semantic mutation (leet, zero-width joiner, homoglyph, vocab
swap, URL host rotation), and their convex hybrid. Candidates are ranked
by reward = w_n*Novelty + w_e*Evasion - w_c*Complexity.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .documents import EmailDocument
from .errors import SeedMismatch
from .features import EmailFeaturizer, Vocabulary, _TOKEN_RE
from .model import ModelState
from .network import backward_vectors, forward_vectors
from .parser import extract_urls

LEET_MAP = {"a": "4", "e": "3", "i": "1", "o": "0", "s": "5"}
HOMOGLYPH_MAP = {
    "a": "а", "c": "с", "e": "е", "i": "і", "o": "о",
    "p": "р", "s": "ѕ", "x": "х", "y": "у",
}
ZERO_WIDTH_JOINER = "‍"


@dataclass
class AdversarialSample:
    seed_id: str
    kind: str  # grad | semantic | hybrid
    perturbed_features: np.ndarray
    ground_truth: int = 1
    mutated_text: Optional[str] = None
    mutated_doc: Optional[EmailDocument] = None
    reward_parts: dict = field(default_factory=dict)
    epsilon_used: float = 0.0
    rho_used: float = 0.0
    lambda_used: float = 0.0
    seed_order: int = 0


_KIND_ORDER = {"grad": 0, "semantic": 1, "hybrid": 2}


def score_vectors(X: np.ndarray, model: ModelState) -> np.ndarray:
    """f_theta over bare feature vectors (isolated email nodes)."""
    return forward_vectors(X, model).scores


def log_score_input_gradients(X: np.ndarray, model: ModelState) -> np.ndarray:
    """Rows of d(log f)/d(x) for each feature vector independently."""
    trace = forward_vectors(X, model)
    dscore = 1.0 / np.clip(trace.scores, 1e-12, None)
    return backward_vectors(trace, model, dscore, X).d_features


def gradient_perturb(seed: EmailDocument, seed_features: np.ndarray, model: ModelState,
                     epsilon: float, direction: str = "evade",
                     seed_order: int = 0) -> AdversarialSample:
    """FGSM step on the feature vector: x + s*eps*sign(grad log f), s=-1 to evade."""
    if direction not in ("evade", "boost"):
        raise ValueError(f"unknown direction {direction!r}")
    x = np.asarray(seed_features, dtype=np.float64)
    grad = log_score_input_gradients(x[None, :], model)[0]
    s = -1.0 if direction == "evade" else 1.0
    perturbed = x + s * epsilon * np.sign(grad)
    return AdversarialSample(seed_id=seed.id, kind="grad",
                             perturbed_features=perturbed,
                             epsilon_used=epsilon, seed_order=seed_order)


def _mutate_token(token: str, vocab: Vocabulary, rng: np.random.Generator) -> str:
    op = int(rng.integers(0, 4))
    if op == 0:  # leetspeak: each eligible char flipped with p=0.5, at least one
        positions = [i for i, ch in enumerate(token) if ch.lower() in LEET_MAP]
        if not positions:
            return token
        chars = list(token)
        flips = rng.random(len(positions)) < 0.5
        if not flips.any():
            flips[int(rng.integers(0, len(positions)))] = True
        for pos, flip in zip(positions, flips):
            if flip:
                chars[pos] = LEET_MAP[chars[pos].lower()]
        return "".join(chars)
    if op == 1:  # zero-width joiner inside the token
        if len(token) < 2:
            return token
        cut = int(rng.integers(1, len(token)))
        return token[:cut] + ZERO_WIDTH_JOINER + token[cut:]
    if op == 2:  # single homoglyph swap
        positions = [i for i, ch in enumerate(token) if ch.lower() in HOMOGLYPH_MAP]
        if not positions:
            return token
        pos = positions[int(rng.integers(0, len(positions)))]
        return token[:pos] + HOMOGLYPH_MAP[token[pos].lower()] + token[pos + 1:]
    if vocab.terms:  # replacement by a random vocabulary term
        return str(vocab.terms[int(rng.integers(0, len(vocab.terms)))])
    return token


def mutate_text(text: str, vocab: Vocabulary, rho_mut: float,
                rng: np.random.Generator) -> str:
    out = []
    last = 0
    for m in _TOKEN_RE.finditer(text):
        out.append(text[last:m.start()])
        token = m.group(0)
        out.append(_mutate_token(token, vocab, rng) if rng.random() < rho_mut else token)
        last = m.end()
    out.append(text[last:])
    return "".join(out)


def _mutate_text_outside_urls(text: str, vocab: Vocabulary, rho_mut: float,
                              rng: np.random.Generator) -> str:
    """Token mutation over prose only; URL spans stay intact so the host
    rotation rule keeps working on them."""
    from .parser import _URL_RE
    out = []
    last = 0
    for m in _URL_RE.finditer(text):
        out.append(mutate_text(text[last:m.start()], vocab, rho_mut, rng))
        out.append(m.group(0))
        last = m.end()
    out.append(mutate_text(text[last:], vocab, rho_mut, rng))
    return "".join(out)


def rotate_url_hosts(body: str, urls, homograph_families: Sequence[Sequence[str]],
                     rho_mut: float, rng: np.random.Generator) -> str:
    """Swap URL hosts for a sibling within their configured homograph family."""
    for url in urls:
        family = next((f for f in homograph_families if url.host in f), None)
        if family is None or len(family) < 2 or rng.random() >= rho_mut:
            continue
        siblings = [h for h in family if h != url.host]
        new_host = siblings[int(rng.integers(0, len(siblings)))]
        body = body.replace(url.raw, url.raw.replace(url.host, new_host, 1))
    return body


def semantic_mutate(seed: EmailDocument, vocab: Vocabulary, rho_mut: float,
                    rng_seed: int, featurizer: EmailFeaturizer,
                    homograph_families: Sequence[Sequence[str]] = (),
                    seed_order: int = 0) -> AdversarialSample:
    """Token-level obfuscation; the mutated text is re-parsed and re-featurized."""
    if not 0.0 <= rho_mut <= 1.0:
        raise ValueError("rho_mut must be in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    subject = mutate_text(seed.subject, vocab, rho_mut, rng)
    body = seed.body
    if homograph_families:
        body = rotate_url_hosts(body, seed.urls, homograph_families, rho_mut, rng)
    body = _mutate_text_outside_urls(body, vocab, rho_mut, rng)
    mutated = dataclasses.replace(
        seed, subject=subject, body=body, urls=extract_urls(body), label=1)
    features = featurizer.featurize(mutated).full
    return AdversarialSample(seed_id=seed.id, kind="semantic",
                             perturbed_features=features,
                             mutated_text=f"{subject}\n{body}", mutated_doc=mutated,
                             rho_used=rho_mut, seed_order=seed_order)


def hybrid_combine(grad_sample: AdversarialSample, semantic_sample: AdversarialSample,
                   lambda_hybrid: float) -> AdversarialSample:
    if grad_sample.seed_id != semantic_sample.seed_id:
        raise SeedMismatch(
            f"{grad_sample.seed_id!r} != {semantic_sample.seed_id!r}")
    features = (lambda_hybrid * grad_sample.perturbed_features
                + (1.0 - lambda_hybrid) * semantic_sample.perturbed_features)
    return AdversarialSample(
        seed_id=grad_sample.seed_id, kind="hybrid", perturbed_features=features,
        mutated_text=semantic_sample.mutated_text,
        mutated_doc=semantic_sample.mutated_doc,
        epsilon_used=grad_sample.epsilon_used,
        rho_used=semantic_sample.rho_used, lambda_used=lambda_hybrid,
        seed_order=grad_sample.seed_order)


def red_reward(sample: AdversarialSample, seed_features: np.ndarray, memory,
               model: ModelState, weights: tuple[float, float, float],
               novelty_cap: float = 10.0, score: Optional[float] = None) -> float:
    """Stores the three parts on the sample and returns the scalar reward."""
    phi = sample.perturbed_features
    if len(memory):
        novelty = min(float(np.linalg.norm(phi - e.features)) for e in memory.entries)
    else:
        novelty = novelty_cap
    f = float(score_vectors(phi[None, :], model)[0]) if score is None else float(score)
    evasion = max(0.0, 0.5 - f)
    seed_norm = float(np.linalg.norm(seed_features))
    complexity = (float(np.linalg.norm(phi - seed_features)) / seed_norm
                  if seed_norm > 0 else 0.0)
    w_n, w_e, w_c = weights
    sample.reward_parts = {"novelty": novelty, "evasion": evasion,
                           "complexity": complexity, "score": f}
    return w_n * novelty + w_e * evasion - w_c * complexity


def generate_adversarial_batch(seeds: Sequence[EmailDocument],
                               seed_features: np.ndarray, model: ModelState,
                               memory, vocab: Vocabulary,
                               featurizer: EmailFeaturizer, config,
                               rng_seed: int) -> list[AdversarialSample]:
    """grad/semantic/hybrid candidates per seed, top-M_t kept by reward.

    Ties break by kind order (grad < semantic < hybrid) then seed order.
    Deterministic under rng_seed.
    """
    candidates: list[AdversarialSample] = []
    rng = np.random.default_rng(rng_seed)
    for i, seed in enumerate(seeds):
        x = seed_features[i]
        grad = gradient_perturb(seed, x, model, config.epsilon,
                                config.direction, seed_order=i)
        sem = semantic_mutate(seed, vocab, config.rho_mut,
                              int(rng.integers(0, 2 ** 31)), featurizer,
                              config.homograph_families, seed_order=i)
        hyb = hybrid_combine(grad, sem, config.lambda_hybrid)
        candidates.extend((grad, sem, hyb))
    if not candidates:
        return []
    X = np.stack([c.perturbed_features for c in candidates])
    scores = score_vectors(X, model)
    weights = (config.w_novelty, config.w_evasion, config.w_complexity)
    rewards = [red_reward(c, seed_features[c.seed_order], memory, model, weights,
                          config.novelty_cap, score=scores[j])
               for j, c in enumerate(candidates)]
    order = sorted(range(len(candidates)),
                   key=lambda j: (-rewards[j], _KIND_ORDER[candidates[j].kind],
                                  candidates[j].seed_order))
    kept = order[: config.batch_size]
    for j in kept:
        candidates[j].reward_parts["reward"] = rewards[j]
    return [candidates[j] for j in kept]
