"""Flat key=value configuration covering every tunable default.

Unknown keys are errors; values are coerced to the default's type. The
PipelineConfig dataclass is the single source of defaults and fans out
into the per-module parameter objects.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .graph import CandidatePolicy, RelationParams
from .model import ModelHyper
from .synth import HOMOGRAPH_FAMILIES
from .training import EvolutionConfig


@dataclass
class PipelineConfig:
    # ingest
    vocab_cap: int = 2000
    reputation_path: str = ""
    # semantic encoder
    encoder_backend: str = "hashed"
    encoder_dim: int = 256
    encoder_base_url: str = ""
    encoder_timeout: float = 5.0
    encoder_fallback_to_hashed: bool = False
    task_context: str = "spam-detection"
    # graph construction
    w_domain: float = 1.0
    w_temporal: float = 1.0
    w_semantic: float = 1.0
    w_sender: float = 1.0
    sigma_t: float = 86400.0
    epsilon_r: float = 0.5
    candidate_policy: str = "blocked"
    all_pairs_cap: int = 800
    temporal_window: float = -1.0  # negative means 2*sigma_t
    pagerank_damping: float = 0.85
    max_hops: int = 3
    # model
    hidden_dim: int = 64
    attn_hidden: int = 64
    layers: int = 2
    top_k: int = 16
    tau: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5
    dropout_rate: float = 0.1
    # self-evolution
    fgsm_epsilon: float = 0.05
    mutation_rate: float = 0.15
    hybrid_weight: float = 0.5
    w_novelty: float = 0.4
    w_evasion: float = 0.4
    w_complexity: float = 0.2
    novelty_cap: float = 10.0
    delta_fail: float = 0.5
    memory_capacity: int = 256
    alpha_trace: float = 1.0
    adversarial_batch: int = 16
    lambda_cons: float = 0.5
    mu_adv: float = 0.5
    nu_reg: float = 1e-4
    eta: float = 0.05
    iterations: int = 10
    seed: int = 0
    red_seeds: int = 64
    grad_clip: float = 0.5
    fgsm_direction: str = "evade"
    holdout_fraction: float = 0.2
    # shift protocol
    update_iters: int = 3
    novel_fraction: float = 0.1
    # explain
    d_max: int = 4
    alpha_min: float = 0.15
    k_feat: int = 5
    # evaluation
    threshold: float = 0.5
    precision_at_ks: str = "10,50"

    def relation_params(self) -> RelationParams:
        return RelationParams(w_domain=self.w_domain, w_temporal=self.w_temporal,
                              w_semantic=self.w_semantic, w_sender=self.w_sender,
                              sigma_t=self.sigma_t, epsilon_r=self.epsilon_r)

    def candidate_policy_obj(self) -> CandidatePolicy:
        window = None if self.temporal_window < 0 else self.temporal_window
        return CandidatePolicy(kind=self.candidate_policy,
                               all_pairs_cap=self.all_pairs_cap,
                               temporal_window=window)

    def model_hyper(self, d: int) -> ModelHyper:
        return ModelHyper(d=d, d_h=self.hidden_dim, d_p=self.encoder_dim,
                          n_layers=self.layers, top_k=self.top_k, tau=self.tau,
                          beta=self.beta, gamma=self.gamma,
                          dropout_rate=self.dropout_rate,
                          attn_hidden=self.attn_hidden)

    def evolution(self) -> EvolutionConfig:
        return EvolutionConfig(
            epsilon=self.fgsm_epsilon, rho_mut=self.mutation_rate,
            lambda_hybrid=self.hybrid_weight, w_novelty=self.w_novelty,
            w_evasion=self.w_evasion, w_complexity=self.w_complexity,
            novelty_cap=self.novelty_cap, delta_fail=self.delta_fail,
            m_max=self.memory_capacity, alpha_trace=self.alpha_trace,
            batch_size=self.adversarial_batch, lambda_cons=self.lambda_cons,
            mu_adv=self.mu_adv, nu_reg=self.nu_reg, eta=self.eta,
            iterations=self.iterations, seed=self.seed,
            direction=self.fgsm_direction, red_seeds=self.red_seeds,
            grad_clip=self.grad_clip, homograph_families=HOMOGRAPH_FAMILIES)

    def encoder_settings(self) -> dict:
        return {"backend": self.encoder_backend, "dim": self.encoder_dim,
                "base_url": self.encoder_base_url, "timeout": self.encoder_timeout,
                "fallback_to_hashed": self.encoder_fallback_to_hashed,
                "task_context": self.task_context}

    def ks(self) -> list[int]:
        text = self.precision_at_ks.strip()
        return [int(p) for p in text.split(",") if p.strip()] if text else []

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def parse_config_text(text: str) -> PipelineConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return PipelineConfig(**values)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: PipelineConfig) -> str:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in dataclasses.fields(PipelineConfig)]
    return "\n".join(lines) + "\n"
