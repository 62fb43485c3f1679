"""EvoMail: self-evolving heterogeneous-graph spam and phishing detection.

Public surface: the sklearn-style EvoMailDetector and EmailFeaturizer,
the parsing/graph/model layers underneath, and the experiment drivers.
"""

from .detector import EvoMailDetector
from .documents import AttachmentRecord, AuthFlags, EmailDocument, UrlRecord
from .encoder import SemanticEncoder
from .errors import EvomailError
from .features import EmailFeaturizer, Vocabulary, build_vocabulary
from .graph import (CandidatePolicy, HeteroGraph, RelationParams,
                    build_email_edges, build_graph, compute_structural_stats,
                    expand_entity_graph, relation_score)
from .memory import ExperienceMemory, kmedoids_compress, sample_distance, update_memory
from .metrics import MetricsReport, classification_metrics, stc_metric
from .model import ModelHyper, ModelState, init_model, load_model, save_model
from .network import forward, forward_vectors
from .parser import load_eml, load_mbox, parse_email
from .pipeline import DetectorState, load_state, save_state
from .synth import PhaseSpec, generate_phase_corpus
from .training import EvolutionConfig, LossReport

__version__ = "0.1.0"

__all__ = [
    "AttachmentRecord", "AuthFlags", "CandidatePolicy", "DetectorState",
    "EmailDocument", "EmailFeaturizer", "EvoMailDetector", "EvolutionConfig",
    "EvomailError", "ExperienceMemory", "HeteroGraph", "LossReport",
    "MetricsReport", "ModelHyper", "ModelState", "PhaseSpec", "RelationParams",
    "SemanticEncoder", "UrlRecord", "Vocabulary", "build_email_edges",
    "build_graph", "build_vocabulary", "classification_metrics",
    "compute_structural_stats", "expand_entity_graph", "forward",
    "forward_vectors", "generate_phase_corpus", "init_model",
    "kmedoids_compress", "load_eml", "load_mbox", "load_model", "load_state",
    "parse_email", "relation_score", "sample_distance", "save_model",
    "save_state", "stc_metric", "update_memory",
]
