import math

import numpy as np
import pytest

from evomail.config import PipelineConfig
from evomail.encoder import SemanticEncoder
from evomail.errors import EmptyCorpus
from evomail.features import EmailFeaturizer
from evomail.graph import CandidatePolicy, RelationParams, build_graph, \
    compute_structural_stats
from evomail.memory import ExperienceMemory
from evomail.model import init_model
from evomail.pipeline import build_context, train_pipeline
from evomail.redteam import AdversarialSample, score_vectors
from evomail.training import (EvolutionConfig, bce_terms, compute_losses,
                              detect_failures, make_labels,
                              require_both_classes, run_evolution)

from conftest import make_doc


@pytest.fixture(scope="module")
def ctx_small(p1_small, small_config):
    docs = p1_small[:40]
    featurizer = EmailFeaturizer(vocab_cap=200).fit(docs)
    enc = SemanticEncoder(dim=small_config.encoder_dim)
    return build_context(docs, featurizer, small_config, enc)


def fresh_model(ctx, cfg, seed=0):
    return init_model(cfg.model_hyper(ctx.featurizer.n_features_), seed=seed)


class TestLossTerms:
    def test_bce_half_is_ln2(self):
        loss, _ = bce_terms(np.array([0.5]), np.array([1.0]))
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_empty_memory_zero_cons(self, ctx_small, small_config):
        model = fresh_model(ctx_small, small_config)
        mem = ExperienceMemory(8)
        report, _ = compute_losses(model, ctx_small, mem, [],
                                   np.zeros(0, dtype=np.int64),
                                   lam=0.5, mu=0.5, nu=1e-4)
        assert report.cons == 0.0

    def test_weight_collapse_total_is_task(self, ctx_small, small_config):
        model = fresh_model(ctx_small, small_config)
        mem = ExperienceMemory(8)
        report, _ = compute_losses(model, ctx_small, mem, [],
                                   np.zeros(0, dtype=np.int64),
                                   lam=0.0, mu=0.0, nu=0.0)
        assert report.total == report.task

    def test_composition_identity_random_draws(self, ctx_small, small_config):
        rng = np.random.default_rng(1)
        model = fresh_model(ctx_small, small_config)
        mem = ExperienceMemory(8)
        d = ctx_small.featurizer.n_features_
        mem.insert(rng.normal(size=d), 0.3, None, 0)
        adv = [AdversarialSample("s", "grad", rng.normal(size=d))]
        benign = np.array([0], dtype=np.int64)
        for _ in range(20):
            lam, mu, nu = rng.random(3)
            report, _ = compute_losses(model, ctx_small, mem, adv, benign,
                                       lam=lam, mu=mu, nu=nu)
            recomposed = (report.task + lam * report.cons + mu * report.adv
                          + nu * report.reg)
            assert abs(report.total - recomposed) < 1e-9

    def test_reg_counts_weight_matrices_only(self, ctx_small, small_config):
        model = fresh_model(ctx_small, small_config)
        mem = ExperienceMemory(4)
        _, grads = compute_losses(model, ctx_small, mem, [],
                                  np.zeros(0, dtype=np.int64),
                                  lam=0.0, mu=0.0, nu=1.0)
        # bias gradient has no reg component: task-only gradient at nu=0
        _, grads0 = compute_losses(model, ctx_small, mem, [],
                                   np.zeros(0, dtype=np.int64),
                                   lam=0.0, mu=0.0, nu=0.0)
        np.testing.assert_array_equal(grads["b_init"], grads0["b_init"])
        np.testing.assert_allclose(
            grads["w_out"] - grads0["w_out"], 2.0 * model["w_out"], atol=1e-12)

    def test_memory_reads_update_last_used(self, ctx_small, small_config):
        model = fresh_model(ctx_small, small_config)
        mem = ExperienceMemory(8)
        d = ctx_small.featurizer.n_features_
        mem.insert(np.zeros(d), 0.4, None, 0)
        compute_losses(model, ctx_small, mem, [], np.zeros(0, dtype=np.int64),
                       lam=0.5, mu=0.5, nu=0.0, iteration=7)
        assert mem.entries[0].last_used == 7


class TestDetectFailures:
    def test_threshold_rule(self, ctx_small, small_config):
        model = fresh_model(ctx_small, small_config)
        rng = np.random.default_rng(3)
        d = ctx_small.featurizer.n_features_
        samples = [AdversarialSample(f"s{i}", "grad", rng.normal(size=d))
                   for i in range(8)]
        scores = score_vectors(
            np.stack([s.perturbed_features for s in samples]), model)
        delta = float(np.median(scores))
        failures = detect_failures(samples, model, delta)
        expected = [s for s, f in zip(samples, scores) if f < delta]
        assert failures == expected

    def test_ground_truth_zero_excluded(self, ctx_small, small_config):
        model = fresh_model(ctx_small, small_config)
        d = ctx_small.featurizer.n_features_
        s = AdversarialSample("s", "grad", np.zeros(d), ground_truth=0)
        assert detect_failures([s], model, 0.99) == []

    def test_empty_batch(self, ctx_small, small_config):
        model = fresh_model(ctx_small, small_config)
        assert detect_failures([], model, 0.5) == []


class TestRunEvolution:
    def test_zero_iterations_no_change(self, ctx_small, small_config):
        cfg = small_config.evolution()
        model = fresh_model(ctx_small, small_config)
        before = model.copy()
        mem = ExperienceMemory(cfg.m_max)
        history = run_evolution(ctx_small, model, mem, cfg, iterations=0)
        assert history == []
        assert len(mem) == 0
        for name in model.params:
            np.testing.assert_array_equal(model.params[name],
                                          before.params[name])

    def test_eta_zero_keeps_parameters(self, ctx_small, small_config):
        cfg = small_config.evolution()
        cfg.eta = 0.0
        model = fresh_model(ctx_small, small_config)
        before = model.copy()
        mem = ExperienceMemory(cfg.m_max)
        run_evolution(ctx_small, model, mem, cfg, iterations=2)
        for name in model.params:
            np.testing.assert_array_equal(model.params[name],
                                          before.params[name])

    def test_descent_sanity_small_step(self, ctx_small, small_config):
        cfg = small_config.evolution()
        model = fresh_model(ctx_small, small_config, seed=4)
        mem = ExperienceMemory(cfg.m_max)
        report0, grads = compute_losses(model, ctx_small, mem, [],
                                        np.zeros(0, dtype=np.int64),
                                        lam=cfg.lambda_cons, mu=cfg.mu_adv,
                                        nu=cfg.nu_reg)
        eta = 1e-4
        for name in model.params:
            model.params[name] -= eta * grads.params[name]
        report1, _ = compute_losses(model, ctx_small, mem, [],
                                    np.zeros(0, dtype=np.int64),
                                    lam=cfg.lambda_cons, mu=cfg.mu_adv,
                                    nu=cfg.nu_reg)
        assert report1.total <= report0.total + 1e-12

    def test_memory_bound_every_iteration(self, ctx_small, small_config):
        cfg = small_config.evolution()
        cfg.m_max = 3
        model = fresh_model(ctx_small, small_config)
        mem = ExperienceMemory(cfg.m_max)
        history = run_evolution(ctx_small, model, mem, cfg, iterations=3)
        assert all(row["memory_size"] <= 3 for row in history)
        assert len(mem) <= 3

    def test_history_schema(self, trained_small):
        row = trained_small.history[0]
        assert {"iteration", "loss_task", "loss_cons", "loss_adv", "loss_reg",
                "loss_total", "holdout_f1", "memory_size", "mean_reward",
                "update_seconds"} <= set(row)
        its = [r["iteration"] for r in trained_small.history]
        assert its == list(range(1, len(its) + 1))

    def test_determinism_same_seed(self, p1_small):
        cfg = PipelineConfig(vocab_cap=300, iterations=3, seed=5,
                             red_seeds=8, adversarial_batch=4)
        a = train_pipeline(p1_small[:60], cfg)
        b = train_pipeline(p1_small[:60], cfg)
        for name in a.model.params:
            np.testing.assert_array_equal(a.model.params[name],
                                          b.model.params[name])
        strip = lambda rows: [{k: v for k, v in r.items()
                               if k != "update_seconds"} for r in rows]
        assert strip(a.history) == strip(b.history)
        assert len(a.memory) == len(b.memory)
        for ea, eb in zip(a.memory.entries, b.memory.entries):
            np.testing.assert_array_equal(ea.features, eb.features)
            assert ea.cached_score == eb.cached_score

    def test_requires_both_classes(self, p1_small):
        spam_only = [d for d in p1_small if d.label == 1]
        with pytest.raises(EmptyCorpus):
            require_both_classes(spam_only)

    def test_unlabeled_docs_join_graph_not_loss(self, p1_small, small_config):
        import dataclasses
        docs = [dataclasses.replace(d) for d in p1_small[:30]]
        docs[0].label = None
        featurizer = EmailFeaturizer(vocab_cap=150).fit(docs)
        enc = SemanticEncoder(dim=small_config.encoder_dim)
        ctx = build_context(docs, featurizer, small_config, enc)
        assert (ctx.labels == -1).sum() == 1
        model = fresh_model(ctx, small_config)
        report, _ = compute_losses(model, ctx, ExperienceMemory(4), [],
                                   np.zeros(0, dtype=np.int64),
                                   lam=0, mu=0, nu=0)
        assert np.isfinite(report.total)
