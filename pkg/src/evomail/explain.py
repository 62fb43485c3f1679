"""Evidence-path extraction along high-attention edges, gradient-times-input
feature importance, and deterministic templated explanations.

Hop i follows the argmax attention edge into the current node at layer
L-i+1 (clamped to layer 1 for paths deeper than L); each appended node
carries the max attention into it one layer down. Extraction stops at the
depth cap, when the next confidence drops under the floor, or on a dead
end (no neighbors, or a revisit: argmax chains can loop on symmetric
graphs, so revisiting terminates the path).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import TraceUnavailable
from .graph import RELATION_KINDS, HeteroGraph
from .model import ModelState
from .network import ForwardTrace, input_gradient


@dataclass(frozen=True)
class PathStep:
    node_id: str
    node_kind: str
    relation_to_previous: Optional[str]
    confidence: float


@dataclass(frozen=True)
class EvidencePath:
    steps: tuple[PathStep, ...]
    terminated_by: str  # depth_cap | confidence_floor | dead_end

    def node_ids(self) -> list[str]:
        return [s.node_id for s in self.steps]


@dataclass(frozen=True)
class FeatureAttribution:
    feature_index: int
    feature_name: str
    importance: float


def _attention_into(trace: ForwardTrace, layer: int, v: int):
    """(neighbor idx, alpha, relation idx) rows into v at `layer` (1-based)."""
    sl = trace.selection.pairs_of(v)
    return (trace.selection.src[sl], trace.alpha[layer - 1][sl],
            trace.selection.rel[sl])


def _confidence(trace: ForwardTrace, layer: int, v: int) -> float:
    _, alphas, _ = _attention_into(trace, layer, v)
    return float(alphas.max()) if alphas.size else 0.0


def extract_evidence_path(v: int, trace: ForwardTrace, graph: HeteroGraph,
                          d_max: int = 4, alpha_min: float = 0.15) -> EvidencePath:
    """Follow argmax-attention hops starting from email node v."""
    if not trace.alpha:
        raise TraceUnavailable("trace has no attention layers")
    n_layers = len(trace.alpha)

    def hop_layer(i: int) -> int:
        return max(1, n_layers - i + 1)

    steps = [PathStep(graph.nodes[v].id, graph.nodes[v].kind, None,
                      _confidence(trace, n_layers, v))]
    visited = {v}
    current = v
    i = 1
    terminated = None
    while terminated is None:
        if len(steps) - 1 >= d_max:
            terminated = "depth_cap"
            break
        nbrs, alphas, rels = _attention_into(trace, hop_layer(i), current)
        if nbrs.size == 0:
            terminated = "dead_end"
            break
        # argmax attention, ties by ascending node id
        best = min(range(nbrs.size),
                   key=lambda j: (-alphas[j], graph.nodes[int(nbrs[j])].id))
        u = int(nbrs[best])
        conf = _confidence(trace, max(1, n_layers - i), u)
        if conf < alpha_min:
            terminated = "confidence_floor"
            break
        if u in visited:
            terminated = "dead_end"
            break
        steps.append(PathStep(graph.nodes[u].id, graph.nodes[u].kind,
                              RELATION_KINDS[int(rels[best])], conf))
        visited.add(u)
        current = u
        i += 1
    return EvidencePath(steps=tuple(steps), terminated_by=terminated)


def feature_importance(v: int, trace: ForwardTrace, graph: HeteroGraph,
                       model: ModelState, feature_names: Sequence[str],
                       k_feat: int = 5) -> list[FeatureAttribution]:
    """Top-k |d score/d x_i| * |x_i| for email node v, sorted descending."""
    grad = input_gradient(trace, graph, model, v)
    importance = np.abs(grad) * np.abs(graph.features[v])
    order = sorted(range(importance.size), key=lambda i: (-importance[i], i))
    picked = order[: min(k_feat, importance.size)]
    return [FeatureAttribution(i, feature_names[i] if i < len(feature_names)
                               else f"f{i}", float(importance[i])) for i in picked]


def render_explanation(path: EvidencePath,
                       attributions: dict[str, list[FeatureAttribution]],
                       score: float) -> str:
    """Fixed template: verdict line, one line per path step, then a feature
    line per node that has attributions. No generative model involved."""
    verdict = "spam" if score >= 0.5 else "ham"
    lines = [f"score={score:.3f}, verdict={verdict}"]
    for step in path.steps:
        if step.relation_to_previous is None:
            lines.append(f"{step.node_kind}({step.node_id}) "
                         f"confidence {step.confidence:.3f}")
        else:
            lines.append(f"{step.node_kind}({step.node_id}) "
                         f"--{step.relation_to_previous}--> "
                         f"confidence {step.confidence:.3f}")
    for step in path.steps:
        attrs = attributions.get(step.node_id)
        if attrs:
            parts = ", ".join(f"{a.feature_name}={a.importance:.3f}" for a in attrs)
            lines.append(f"features({step.node_id}): {parts}")
    return "\n".join(lines)


def explain_node(v: int, trace: ForwardTrace, graph: HeteroGraph, model: ModelState,
                 feature_names: Sequence[str], d_max: int = 4,
                 alpha_min: float = 0.15, k_feat: int = 5
                 ) -> tuple[str, EvidencePath, list[FeatureAttribution]]:
    """Path + attributions + rendered text for one scored email node."""
    path = extract_evidence_path(v, trace, graph, d_max, alpha_min)
    attrs = feature_importance(v, trace, graph, model, feature_names, k_feat)
    text = render_explanation(path, {graph.nodes[v].id: attrs}, trace.score_of(v))
    return text, path, attrs
