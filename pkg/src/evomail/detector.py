"""scikit-learn style estimator facade over the detection pipeline.

EvoMailDetector.fit takes a list of EmailDocument (labels on the docs or
passed as y), runs the adversarial self-evolution training loop, and then
predicts on new documents by scoring them in graph context with the
training corpus. Composes with sklearn tooling via get_params/set_params.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .config import PipelineConfig
from .documents import EmailDocument
from .errors import NotFitted
from .pipeline import (DetectorState, continue_pipeline, explain_documents,
                       load_state, save_state, score_documents, train_pipeline)


def _check_documents(X, y=None) -> list[EmailDocument]:
    docs = list(X)
    if not all(isinstance(d, EmailDocument) for d in docs):
        raise TypeError("X must be a sequence of EmailDocument")
    if y is None:
        return docs
    y = np.asarray(y)
    if y.shape != (len(docs),):
        raise ValueError(f"y has shape {y.shape}, expected ({len(docs)},)")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("y must be binary 0/1")
    return [dataclasses.replace(d, label=int(label)) for d, label in zip(docs, y)]


class EvoMailDetector(BaseEstimator, ClassifierMixin):
    """Graph-based spam/phishing detector hardened by red-blue self-play.

    Parameters mirror the pipeline configuration; anything not surfaced
    here can be supplied through `extra_config`.
    """

    def __init__(self, vocab_cap: int = 2000, hidden_dim: int = 64,
                 layers: int = 2, top_k: int = 16, tau: float = 1.0,
                 beta: float = 1.0, gamma: float = 0.5,
                 dropout_rate: float = 0.1, epsilon_r: float = 0.5,
                 sigma_t: float = 86400.0, candidate_policy: str = "blocked",
                 encoder_backend: str = "hashed", encoder_dim: int = 256,
                 fgsm_epsilon: float = 0.05, mutation_rate: float = 0.15,
                 hybrid_weight: float = 0.5, memory_capacity: int = 256,
                 adversarial_batch: int = 16, lambda_cons: float = 0.5,
                 mu_adv: float = 0.5, nu_reg: float = 1e-4, eta: float = 0.05,
                 grad_clip: float = 0.5, iterations: int = 10,
                 red_seeds: int = 64, holdout_fraction: float = 0.2,
                 threshold: float = 0.5, seed: int = 0,
                 extra_config: Optional[dict] = None):
        self.vocab_cap = vocab_cap
        self.hidden_dim = hidden_dim
        self.layers = layers
        self.top_k = top_k
        self.tau = tau
        self.beta = beta
        self.gamma = gamma
        self.dropout_rate = dropout_rate
        self.epsilon_r = epsilon_r
        self.sigma_t = sigma_t
        self.candidate_policy = candidate_policy
        self.encoder_backend = encoder_backend
        self.encoder_dim = encoder_dim
        self.fgsm_epsilon = fgsm_epsilon
        self.mutation_rate = mutation_rate
        self.hybrid_weight = hybrid_weight
        self.memory_capacity = memory_capacity
        self.adversarial_batch = adversarial_batch
        self.lambda_cons = lambda_cons
        self.mu_adv = mu_adv
        self.nu_reg = nu_reg
        self.eta = eta
        self.grad_clip = grad_clip
        self.iterations = iterations
        self.red_seeds = red_seeds
        self.holdout_fraction = holdout_fraction
        self.threshold = threshold
        self.seed = seed
        self.extra_config = extra_config

    def pipeline_config(self) -> PipelineConfig:
        direct = {k: getattr(self, k) for k in (
            "vocab_cap", "hidden_dim", "layers", "top_k", "tau", "beta",
            "gamma", "dropout_rate", "epsilon_r", "sigma_t", "candidate_policy",
            "encoder_backend", "encoder_dim", "fgsm_epsilon", "mutation_rate",
            "hybrid_weight", "memory_capacity", "adversarial_batch",
            "lambda_cons", "mu_adv", "nu_reg", "eta", "grad_clip", "iterations",
            "red_seeds", "holdout_fraction", "threshold", "seed")}
        direct.update(self.extra_config or {})
        return PipelineConfig(**direct)

    def fit(self, X: Sequence[EmailDocument], y=None) -> "EvoMailDetector":
        docs = _check_documents(X, y)
        self.state_ = train_pipeline(docs, self.pipeline_config())
        self.classes_ = np.array([0, 1])
        return self

    def _require_fit(self) -> DetectorState:
        if not hasattr(self, "state_"):
            raise NotFitted("call fit before predicting")
        return self.state_

    def score_samples(self, X: Sequence[EmailDocument]) -> np.ndarray:
        """Spam probability per document."""
        return score_documents(self._require_fit(), _check_documents(X))

    def predict_proba(self, X: Sequence[EmailDocument]) -> np.ndarray:
        s = self.score_samples(X)
        return np.column_stack([1.0 - s, s])

    def predict(self, X: Sequence[EmailDocument]) -> np.ndarray:
        return (self.score_samples(X) >= self.threshold).astype(int)

    def decision_function(self, X: Sequence[EmailDocument]) -> np.ndarray:
        return self.score_samples(X)

    def evolve(self, X: Sequence[EmailDocument], iterations: int,
               y=None) -> "EvoMailDetector":
        """Incremental red-blue updates on a new batch only."""
        continue_pipeline(self._require_fit(), _check_documents(X, y), iterations)
        return self

    def explain(self, X: Sequence[EmailDocument], email_id: str) -> str:
        text, _, _, _ = explain_documents(self._require_fit(),
                                          _check_documents(X), email_id)
        return text

    @property
    def history_(self) -> list[dict]:
        return self._require_fit().history

    def save(self, path) -> None:
        save_state(self._require_fit(), path)

    @classmethod
    def load(cls, path) -> "EvoMailDetector":
        state = load_state(path)
        det = cls(**{k: getattr(state.config, k) for k in (
            "vocab_cap", "hidden_dim", "layers", "top_k", "tau", "beta",
            "gamma", "dropout_rate", "epsilon_r", "sigma_t", "candidate_policy",
            "encoder_backend", "encoder_dim", "fgsm_epsilon", "mutation_rate",
            "hybrid_weight", "memory_capacity", "adversarial_batch",
            "lambda_cons", "mu_adv", "nu_reg", "eta", "grad_clip", "iterations",
            "red_seeds", "holdout_fraction", "threshold", "seed")})
        det.state_ = state
        det.classes_ = np.array([0, 1])
        return det
