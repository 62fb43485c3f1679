import numpy as np
import pytest

from evomail.errors import SeedMismatch
from evomail.features import EmailFeaturizer, build_vocabulary
from evomail.memory import ExperienceMemory
from evomail.redteam import (HOMOGLYPH_MAP, LEET_MAP, ZERO_WIDTH_JOINER,
                             _mutate_token, gradient_perturb, hybrid_combine,
                             mutate_text, red_reward, score_vectors,
                             semantic_mutate)
from evomail.training import EvolutionConfig

from conftest import make_doc


@pytest.fixture(scope="module")
def spam_doc():
    return make_doc(0, "win a free prize now claim your reward", label=1)


@pytest.fixture(scope="module")
def corpus_featurizer(spam_doc):
    docs = [spam_doc, make_doc(1, "regular meeting minutes attached", label=0),
            make_doc(2, "free lunch on friday", label=0)]
    return docs, EmailFeaturizer(vocab_cap=30).fit(docs)


class TestGradientPerturb:
    def test_epsilon_zero_is_identity(self, corpus_featurizer, tiny_model):
        docs, fz = corpus_featurizer
        x = np.zeros(tiny_model.hyper.d)
        x[: fz.n_features_ if fz.n_features_ < tiny_model.hyper.d
          else tiny_model.hyper.d] = 0.5
        sample = gradient_perturb(docs[0], x, tiny_model, epsilon=0.0)
        np.testing.assert_array_equal(sample.perturbed_features, x)
        assert sample.kind == "grad"
        assert sample.mutated_text is None

    def test_step_is_sign_scaled(self, corpus_featurizer, tiny_model):
        docs, _ = corpus_featurizer
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, size=tiny_model.hyper.d)
        s = gradient_perturb(docs[0], x, tiny_model, epsilon=0.05)
        delta = s.perturbed_features - x
        moved = delta != 0
        assert np.allclose(np.abs(delta[moved]), 0.05)

    def test_evade_and_boost_are_opposite(self, corpus_featurizer, tiny_model):
        docs, _ = corpus_featurizer
        rng = np.random.default_rng(2)
        x = rng.normal(0, 1, size=tiny_model.hyper.d)
        ev = gradient_perturb(docs[0], x, tiny_model, 0.05, "evade")
        bo = gradient_perturb(docs[0], x, tiny_model, 0.05, "boost")
        np.testing.assert_allclose(ev.perturbed_features - x,
                                   -(bo.perturbed_features - x), atol=1e-15)

    def test_boost_raises_score_evade_lowers(self, corpus_featurizer, tiny_model):
        docs, _ = corpus_featurizer
        rng = np.random.default_rng(3)
        lowered = raised = 0
        for k in range(20):
            x = rng.normal(0, 1, size=tiny_model.hyper.d)
            f0 = float(score_vectors(x[None], tiny_model)[0])
            ev = gradient_perturb(docs[0], x, tiny_model, 0.05, "evade")
            bo = gradient_perturb(docs[0], x, tiny_model, 0.05, "boost")
            lowered += score_vectors(ev.perturbed_features[None], tiny_model)[0] < f0
            raised += score_vectors(bo.perturbed_features[None], tiny_model)[0] > f0
        assert lowered >= 18 and raised >= 18


class TestSemanticMutate:
    def test_rho_zero_is_noop(self, corpus_featurizer):
        docs, fz = corpus_featurizer
        vocab = fz.vocabulary_
        s = semantic_mutate(docs[0], vocab, 0.0, rng_seed=4, featurizer=fz)
        assert s.mutated_doc.body == docs[0].body
        np.testing.assert_array_equal(s.perturbed_features,
                                      fz.featurize(docs[0]).full)

    def test_rho_one_changes_tokens_and_drops_tfidf(self, corpus_featurizer):
        docs, fz = corpus_featurizer
        vocab = fz.vocabulary_
        s = semantic_mutate(docs[0], vocab, 1.0, rng_seed=5, featurizer=fz)
        assert s.mutated_doc.body != docs[0].body
        i = vocab.index["free"]
        body_half = fz.featurize(s.mutated_doc).full[len(vocab) + i]
        orig_half = fz.featurize(docs[0]).full[len(vocab) + i]
        assert orig_half > 0
        # "free" was mutated into a non-vocab form (or swapped away)
        assert body_half < orig_half or "free" not in s.mutated_doc.body

    def test_seeded_determinism(self, corpus_featurizer):
        docs, fz = corpus_featurizer
        vocab = fz.vocabulary_
        a = semantic_mutate(docs[0], vocab, 0.7, rng_seed=9, featurizer=fz)
        b = semantic_mutate(docs[0], vocab, 0.7, rng_seed=9, featurizer=fz)
        assert a.mutated_text == b.mutated_text
        np.testing.assert_array_equal(a.perturbed_features, b.perturbed_features)

    def test_leet_branch_produces_family(self, corpus_featurizer):
        docs, fz = corpus_featurizer
        vocab = fz.vocabulary_
        seen = set()
        for seed in range(200):
            rng = np.random.default_rng(seed)
            probe = rng.integers(0, 4)
            if probe != 0:
                continue
            out = _mutate_token("free", vocab, np.random.default_rng(seed))
            seen.add(out)
        # leet family of "free": at least one 'e'->'3' substitution
        assert seen
        assert all(tok != "free" for tok in seen)
        assert all(set(tok) <= set("fr3e") for tok in seen)

    def test_zwj_insertion_is_inside_token(self, corpus_featurizer):
        docs, fz = corpus_featurizer
        vocab = fz.vocabulary_
        for seed in range(200):
            rng = np.random.default_rng(seed)
            if rng.integers(0, 4) != 1:
                continue
            out = _mutate_token("winner", vocab, np.random.default_rng(seed))
            assert ZERO_WIDTH_JOINER in out
            assert not out.startswith(ZERO_WIDTH_JOINER)
            assert not out.endswith(ZERO_WIDTH_JOINER)
            break

    def test_url_host_rotation(self, corpus_featurizer):
        from evomail.parser import extract_urls
        _, fz = corpus_featurizer
        body = "pay at http://secure-pay.example/now quickly"
        doc = make_doc(5, body, urls=extract_urls(body), label=1)
        families = (("secure-pay.example", "sec0re-pay.example"),)
        vocab = fz.vocabulary_
        rotated = 0
        for seed in range(20):
            s = semantic_mutate(doc, vocab, 1.0, rng_seed=seed, featurizer=fz,
                                homograph_families=families)
            hosts = {u.host for u in s.mutated_doc.urls}
            rotated += "sec0re-pay.example" in hosts
        assert rotated > 0

    def test_mutated_text_reparsed(self, corpus_featurizer):
        docs, fz = corpus_featurizer
        vocab = fz.vocabulary_
        s = semantic_mutate(docs[0], vocab, 1.0, rng_seed=11, featurizer=fz)
        assert s.kind == "semantic"
        assert s.mutated_text is not None
        np.testing.assert_array_equal(
            s.perturbed_features, fz.featurize(s.mutated_doc).full)


class TestHybrid:
    def test_endpoints_and_midpoint(self, corpus_featurizer, tiny_model):
        docs, fz = corpus_featurizer
        x = fz.featurize(docs[0]).full
        x = np.resize(x, tiny_model.hyper.d)
        g = gradient_perturb(docs[0], x, tiny_model, 0.05)
        s = semantic_mutate(docs[0], fz.vocabulary_, 0.5, rng_seed=3,
                            featurizer=fz)
        s.perturbed_features = np.resize(s.perturbed_features, tiny_model.hyper.d)
        for lam, ref in ((1.0, g.perturbed_features),
                         (0.0, s.perturbed_features)):
            h = hybrid_combine(g, s, lam)
            np.testing.assert_array_equal(h.perturbed_features, ref)
        mid = hybrid_combine(g, s, 0.5)
        np.testing.assert_allclose(
            mid.perturbed_features,
            0.5 * g.perturbed_features + 0.5 * s.perturbed_features, atol=1e-15)
        assert mid.mutated_text == s.mutated_text
        assert mid.kind == "hybrid"

    def test_seed_mismatch(self, corpus_featurizer, tiny_model):
        docs, fz = corpus_featurizer
        x = np.zeros(tiny_model.hyper.d)
        g = gradient_perturb(docs[0], x, tiny_model, 0.05)
        s = semantic_mutate(docs[1], fz.vocabulary_, 0.5, rng_seed=3,
                            featurizer=fz)
        with pytest.raises(SeedMismatch):
            hybrid_combine(g, s, 0.5)


class TestRedReward:
    def _sample(self, phi, seed_phi):
        from evomail.redteam import AdversarialSample
        return AdversarialSample(seed_id="s", kind="grad",
                                 perturbed_features=np.asarray(phi, float)), \
            np.asarray(seed_phi, float)

    def test_evasion_hinge_values(self, tiny_model):
        mem = ExperienceMemory(4)
        s, seed = self._sample([1.0, 0.0], [1.0, 0.0])
        pad = np.resize(seed, tiny_model.hyper.d)
        s.perturbed_features = pad
        red_reward(s, pad, mem, tiny_model, (0.4, 0.4, 0.2), score=0.7)
        assert s.reward_parts["evasion"] == 0.0
        red_reward(s, pad, mem, tiny_model, (0.4, 0.4, 0.2), score=0.3)
        assert s.reward_parts["evasion"] == pytest.approx(0.2, abs=1e-12)

    def test_novelty_empty_memory_cap(self, tiny_model):
        mem = ExperienceMemory(4)
        s, seed = self._sample(np.zeros(tiny_model.hyper.d),
                               np.zeros(tiny_model.hyper.d))
        red_reward(s, seed, mem, tiny_model, (1.0, 0.0, 0.0), novelty_cap=10.0,
                   score=0.5)
        assert s.reward_parts["novelty"] == 10.0

    def test_novelty_zero_for_memorized_sample(self, tiny_model):
        mem = ExperienceMemory(4)
        phi = np.arange(tiny_model.hyper.d, dtype=float)
        mem.insert(phi, 0.2, None, iteration=1)
        s, seed = self._sample(phi, phi)
        red_reward(s, phi, mem, tiny_model, (1.0, 0.0, 0.0), score=0.5)
        assert s.reward_parts["novelty"] == 0.0

    def test_complexity_and_monotonicity(self, tiny_model):
        mem = ExperienceMemory(4)
        seed = np.ones(tiny_model.hyper.d)
        near = seed + 0.01
        far = seed + 1.0
        rewards = []
        for phi in (near, far):
            s, _ = self._sample(phi, seed)
            r = red_reward(s, seed, mem, tiny_model, (0.0, 0.0, 1.0), score=0.5)
            rewards.append(r)
            assert s.reward_parts["complexity"] > 0
        assert rewards[1] < rewards[0]  # more complexity, lower reward

    def test_zero_seed_norm_guard(self, tiny_model):
        mem = ExperienceMemory(4)
        seed = np.zeros(tiny_model.hyper.d)
        s, _ = self._sample(np.ones(tiny_model.hyper.d), seed)
        red_reward(s, seed, mem, tiny_model, (0.0, 0.0, 1.0), score=0.5)
        assert s.reward_parts["complexity"] == 0.0


class TestGenerateBatch:
    def _config(self, **kw):
        cfg = EvolutionConfig(red_seeds=4, batch_size=3)
        for k, v in kw.items():
            setattr(cfg, k, v)
        return cfg

    def test_single_seed_three_candidates(self, trained_small):
        from evomail.redteam import generate_adversarial_batch
        state = trained_small
        docs = [d for d in state.context_docs if d.label == 1][:1]
        X = state.featurizer.transform(docs)
        mem = ExperienceMemory(8)
        cfg = self._config(batch_size=3)
        batch = generate_adversarial_batch(docs, X, state.model, mem,
                                           state.featurizer.vocabulary_,
                                           state.featurizer, cfg, rng_seed=1)
        assert [s.kind for s in batch][0:3]
        assert {s.kind for s in batch} == {"grad", "semantic", "hybrid"}
        rewards = [s.reward_parts["reward"] for s in batch]
        assert rewards == sorted(rewards, reverse=True)

    def test_tie_break_kind_order(self, trained_small):
        from evomail.redteam import generate_adversarial_batch
        state = trained_small
        docs = [d for d in state.context_docs if d.label == 1][:1]
        X = state.featurizer.transform(docs)
        mem = ExperienceMemory(8)
        # novelty-only reward with empty memory: every candidate ties at cap
        cfg = self._config(batch_size=1, w_novelty=1.0, w_evasion=0.0,
                           w_complexity=0.0)
        batch = generate_adversarial_batch(docs, X, state.model, mem,
                                           state.featurizer.vocabulary_,
                                           state.featurizer, cfg, rng_seed=1)
        assert len(batch) == 1
        assert batch[0].kind == "grad"

    def test_deterministic_under_seed(self, trained_small):
        from evomail.redteam import generate_adversarial_batch
        state = trained_small
        docs = [d for d in state.context_docs if d.label == 1][:3]
        X = state.featurizer.transform(docs)
        out = []
        for _ in range(2):
            mem = ExperienceMemory(8)
            batch = generate_adversarial_batch(docs, X, state.model, mem,
                                               state.featurizer.vocabulary_,
                                               state.featurizer,
                                               self._config(), rng_seed=77)
            out.append([(s.kind, s.seed_id, tuple(np.round(s.perturbed_features[:5], 12)))
                        for s in batch])
        assert out[0] == out[1]
