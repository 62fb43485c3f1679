import numpy as np
import pytest

from evomail.config import PipelineConfig
from evomail.documents import EmailDocument
from evomail.encoder import SemanticEncoder
from evomail.features import EmailFeaturizer
from evomail.graph import (CandidatePolicy, RelationParams, build_graph,
                           compute_structural_stats)
from evomail.model import ModelHyper, init_model
from evomail.pipeline import train_pipeline
from evomail.synth import PhaseSpec, generate_phase_corpus

BASE_TS = 1700000000.0


def make_doc(i, body, subject=None, sender=None, ts=BASE_TS, label=None, **kw):
    return EmailDocument(
        id=f"m{i}", raw_hash=f"hash{i}",
        subject=f"subject {i}" if subject is None else subject,
        body=body,
        sender_address=sender or f"user{i % 3}@dom{i % 2}.example",
        sender_domain=None,
        recipient_addresses=[f"rcpt{i % 2}@corp.example"],
        timestamp=ts, label=label, **kw)


@pytest.fixture(scope="session")
def tiny_docs():
    bodies = [
        "win a free lottery prize now visit http://bit.ly/claim",
        "meeting notes for project apollo are attached here",
        "free free prize claim your reward at http://evil-hub.example/z",
        "lunch on tuesday sounds good to me",
        "unlock your account verify password http://evil-hub.example/z now",
        "quarterly report draft numbers for the east region",
    ]
    return [make_doc(i, b, ts=BASE_TS + i * 3600.0, label=i % 2)
            for i, b in enumerate(bodies)]


@pytest.fixture(scope="session")
def tiny_featurizer(tiny_docs):
    return EmailFeaturizer(vocab_cap=20).fit(tiny_docs)


@pytest.fixture(scope="session")
def tiny_encoder():
    return SemanticEncoder(dim=32)


@pytest.fixture(scope="session")
def tiny_graph(tiny_docs, tiny_featurizer, tiny_encoder):
    X = tiny_featurizer.transform(tiny_docs)
    return build_graph(tiny_docs, X, RelationParams(), tiny_encoder,
                       CandidatePolicy(kind="all_pairs"))


@pytest.fixture(scope="session")
def tiny_stats(tiny_graph):
    return compute_structural_stats(tiny_graph)


@pytest.fixture(scope="session")
def tiny_model(tiny_graph):
    hyper = ModelHyper(d=tiny_graph.features.shape[1], d_h=8, d_p=32,
                       n_layers=2, top_k=3, attn_hidden=6, dropout_rate=0.0)
    model = init_model(hyper, seed=5)
    rng = np.random.default_rng(9)
    for name in ("salience_logits", "w_r", "w_struct", "b_init", "b_layer",
                 "attn_b1", "attn_b2", "b_out"):
        model.params[name] = rng.normal(0.0, 0.3, size=model.params[name].shape)
    return model


@pytest.fixture(scope="session")
def p1_small():
    return generate_phase_corpus(PhaseSpec("P1", n_emails=120, spam_ratio=0.5,
                                           seed=31))


@pytest.fixture(scope="session")
def small_config():
    return PipelineConfig(vocab_cap=400, iterations=4, seed=1, red_seeds=12,
                          adversarial_batch=6, memory_capacity=32)


@pytest.fixture(scope="session")
def trained_small(p1_small, small_config):
    return train_pipeline(p1_small, small_config)
