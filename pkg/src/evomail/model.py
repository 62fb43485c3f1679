"""Learnable parameters and hyperparameters of the cognitive GNN.

Everything lives in float64 numpy arrays keyed by name, so the manual
reverse-mode pass in network.py can address parameter groups uniformly
and persistence stays a flat tensor dump.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import _serialize as ser
from .errors import CorruptFile
from .graph import RELATION_KINDS

# Parameters counted as "weight matrices" by the L2 regularizer; biases,
# scalars, relation embeddings and mixing vectors are excluded.
WEIGHT_MATRIX_NAMES = ("w_init", "attn_w1", "attn_w2", "w_neigh", "w_self",
                       "w_edge", "w_out")


@dataclass
class ModelHyper:
    d: int
    d_h: int = 64
    d_p: int = 256
    n_layers: int = 2
    top_k: int = 16
    tau: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5
    dropout_rate: float = 0.1
    attn_hidden: int = 64
    n_relations: int = len(RELATION_KINDS)

    def validate(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.top_k < 1 or self.n_layers < 1:
            raise ValueError("top_k and n_layers must be >= 1")


@dataclass
class ModelState:
    hyper: ModelHyper
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def copy(self) -> "ModelState":
        return ModelState(
            hyper=ModelHyper(**asdict(self.hyper)),
            params={k: v.copy() for k, v in self.params.items()})

    def salience_weights(self) -> np.ndarray:
        """softmax([a_s, a_f, a_c]): structural/frequency/semantic mixing."""
        logits = self.params["salience_logits"]
        z = np.exp(logits - logits.max())
        return z / z.sum()

    def weight_squared_norm(self) -> float:
        return float(sum((self.params[n] ** 2).sum() for n in WEIGHT_MATRIX_NAMES))

    def check_finite(self):
        for name, arr in self.params.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite parameter {name}")


def param_shapes(hyper: ModelHyper) -> dict[str, tuple[int, ...]]:
    h = hyper
    return {
        "w_init": (h.d_h, h.d),
        "b_init": (h.d_h,),
        "salience_logits": (3,),
        "attn_w1": (h.attn_hidden, h.d_p),
        "attn_b1": (h.attn_hidden,),
        "attn_w2": (h.attn_hidden,),
        "attn_b2": (),
        "w_r": (h.n_relations,),
        "w_struct": (4,),
        "relation_embed": (h.n_relations, h.d_h),
        "w_neigh": (h.n_layers, h.d_h, h.d_h),
        "w_self": (h.n_layers, h.d_h, h.d_h),
        "w_edge": (h.n_layers, h.d_h, h.d_h),
        "b_layer": (h.n_layers, h.d_h),
        "w_out": (h.n_layers * h.d_h,),
        "b_out": (),
    }


def init_model(hyper: ModelHyper, seed: int = 0) -> ModelState:
    """Symmetric uniform(+-1/sqrt(fan_in)) weights; zero biases, zero salience
    logits (neutral mixing), zero w_r/w_struct."""
    hyper.validate()
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    h = hyper
    params = {
        "w_init": uniform((h.d_h, h.d), h.d),
        "b_init": np.zeros(h.d_h),
        "salience_logits": np.zeros(3),
        "attn_w1": uniform((h.attn_hidden, h.d_p), h.d_p),
        "attn_b1": np.zeros(h.attn_hidden),
        "attn_w2": uniform((h.attn_hidden,), h.attn_hidden),
        "attn_b2": np.zeros(()),
        "w_r": np.zeros(h.n_relations),
        "w_struct": np.zeros(4),
        "relation_embed": uniform((h.n_relations, h.d_h), h.d_h),
        "w_neigh": uniform((h.n_layers, h.d_h, h.d_h), h.d_h),
        "w_self": uniform((h.n_layers, h.d_h, h.d_h), h.d_h),
        "w_edge": uniform((h.n_layers, h.d_h, h.d_h), h.d_h),
        "b_layer": np.zeros((h.n_layers, h.d_h)),
        "w_out": uniform((h.n_layers * h.d_h,), h.n_layers * h.d_h),
        "b_out": np.zeros(()),
    }
    return ModelState(hyper=hyper, params=params)


# ---------------------------------------------------------------------------
# EVOMAIL-MODEL v1: hyperparameters, then one record per tensor with its
# base64 little-endian float64 payload. Bit-exact and endian-fixed.

_KIND = "MODEL"


def save_model(path: str | Path, model: ModelState) -> None:
    lines = [ser.format_header(_KIND), ser.json_line({"hyper": asdict(model.hyper)})]
    for name in sorted(model.params):
        arr = model.params[name]
        lines.append(ser.json_line({
            "name": name, "shape": list(arr.shape), "data": ser.array_to_b64(arr)}))
    ser.atomic_write_text(path, "\n".join(lines) + "\n")


def load_model(path: str | Path) -> ModelState:
    lines = ser.read_lines(path, _KIND)
    if not lines:
        raise CorruptFile("missing hyperparameter record", 1)
    head = ser.parse_json_line(lines[0], 1)
    try:
        hyper = ModelHyper(**head["hyper"])
    except (KeyError, TypeError) as exc:
        raise CorruptFile(f"bad hyperparameter record: {exc}", 1) from exc
    params: dict[str, np.ndarray] = {}
    for i, line in enumerate(lines[1:], 2):
        rec = ser.parse_json_line(line, i)
        try:
            params[rec["name"]] = ser.b64_to_array(rec["data"], tuple(rec["shape"]), i)
        except (KeyError, TypeError) as exc:
            raise CorruptFile(f"bad tensor record: {exc}", i) from exc
    expected = param_shapes(hyper)
    missing = sorted(set(expected) - set(params))
    if missing:
        raise CorruptFile(f"missing tensors: {', '.join(missing)}", len(lines))
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise CorruptFile(f"tensor {name} has shape {params[name].shape}, "
                              f"expected {shape}", 0)
    return ModelState(hyper=hyper, params=params)
