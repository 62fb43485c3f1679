"""Text embeddings behind one abstraction: a deterministic built-in hashed
encoder (default) and an optional remote HTTP service client.

The hashed backend feature-hashes character trigrams of the space-joined
token stream into `dim` signed buckets and L2-normalizes, so the whole
system runs self-contained with stable embeddings across runs. Empty text
maps to the fixed basis vector e_1 (avoids NaN cosines).
"""

from __future__ import annotations

import hashlib
import json
import urllib.error
import urllib.request

import numpy as np

from .errors import RemoteUnavailable
from .features import tokenize

# Fixed odd multipliers for the rolling trigram hash (uint64 wraparound).
_A = np.uint64(0x9E3779B97F4A7C15)
_B = np.uint64(0xC2B2AE3D27D4EB4F)
_C = np.uint64(0x165667B19E3779F9)
_MIX = np.uint64(0xFF51AFD7ED558CCD)

DEFAULT_DIM = 256
PROMPT_BODY_CHARS = 200


def _codepoints(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-32-le"), dtype="<u4").astype(np.uint64)


def _mix(h: np.ndarray) -> np.ndarray:
    h = h ^ (h >> np.uint64(33))
    h = h * _MIX
    return h ^ (h >> np.uint64(29))


def hashed_embedding(text: str, dim: int) -> np.ndarray:
    """Signed trigram feature hashing, unit L2 norm; e_1 for empty input."""
    norm = " ".join(tokenize(text))
    out = np.zeros(dim, dtype=np.float64)
    if not norm:
        out[0] = 1.0
        return out
    cp = _codepoints(norm)
    if cp.size < 3:
        grams = _mix((cp * _A).sum(keepdims=True) + _B)
    else:
        with np.errstate(over="ignore"):
            grams = _mix(cp[:-2] * _A + cp[1:-1] * _B + cp[2:] * _C)
    buckets = (grams % np.uint64(dim)).astype(np.int64)
    signs = 1.0 - 2.0 * ((grams >> np.uint64(32)) & np.uint64(1)).astype(np.float64)
    np.add.at(out, buckets, signs)
    n = np.linalg.norm(out)
    if n == 0.0:
        out[0] = 1.0
        return out
    return out / n


class RemoteEncoderClient:
    """POST /embed {"texts": [...]} -> {"vectors": [[...], ...]}."""

    def __init__(self, base_url: str, dim: int, timeout: float = 5.0, max_batch: int = 64):
        self.base_url = base_url.rstrip("/")
        self.dim = dim
        self.timeout = timeout
        self.max_batch = max_batch

    def embed(self, texts: list[str]) -> np.ndarray:
        rows: list[np.ndarray] = []
        for start in range(0, len(texts), self.max_batch):
            chunk = texts[start:start + self.max_batch]
            payload = json.dumps({"texts": chunk}).encode("utf-8")
            req = urllib.request.Request(
                self.base_url + "/embed", data=payload,
                headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    body = json.loads(resp.read().decode("utf-8"))
                vectors = body["vectors"]
            except (OSError, urllib.error.URLError, ValueError, KeyError) as exc:
                raise RemoteUnavailable(f"embedding service failed: {exc}") from exc
            if len(vectors) != len(chunk):
                raise RemoteUnavailable(
                    f"service returned {len(vectors)} vectors for {len(chunk)} texts")
            for vec in vectors:
                arr = np.asarray(vec, dtype=np.float64)
                if arr.shape != (self.dim,) or not np.all(np.isfinite(arr)):
                    raise RemoteUnavailable("service returned a malformed vector")
                n = np.linalg.norm(arr)
                rows.append(arr / n if n > 0 else _unit_e1(self.dim))
        return np.stack(rows) if rows else np.zeros((0, self.dim))


def _unit_e1(dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=np.float64)
    v[0] = 1.0
    return v


def node_desc(node) -> str:
    """Node description for prompts: subject + leading body for emails,
    the identifier for entity nodes."""
    if node.kind == "email":
        return f"{node.subject} {node.body[:PROMPT_BODY_CHARS]}".strip()
    return node.entity_value


def render_pair_prompt(u, v, relation: str, task_context: str) -> str:
    return (f"TASK: {task_context}\n"
            f"NODE_A({u.kind}): {node_desc(u)}\n"
            f"NODE_B({v.kind}): {node_desc(v)}\n"
            f"RELATION: {relation}")


class SemanticEncoder:
    """Unit-norm text embeddings with a per-run cache.

    backend="hashed" is fully deterministic; backend="remote" talks to the
    configured service and can optionally fall back to hashed on failure.
    """

    def __init__(self, backend: str = "hashed", dim: int = DEFAULT_DIM,
                 base_url: str = "", timeout: float = 5.0,
                 fallback_to_hashed: bool = False,
                 task_context: str = "spam-detection"):
        if backend not in ("hashed", "remote"):
            raise ValueError(f"unknown encoder backend {backend!r}")
        if backend == "remote" and not base_url:
            raise ValueError("remote backend needs a base_url")
        self.backend = backend
        self.dim = dim
        self.task_context = task_context
        self.fallback_to_hashed = fallback_to_hashed
        self._remote = (RemoteEncoderClient(base_url, dim, timeout)
                        if backend == "remote" else None)
        self._cache: dict[bytes, np.ndarray] = {}

    def clear_cache(self):
        self._cache.clear()

    @staticmethod
    def _key(text: str) -> bytes:
        return hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()

    def encode_text(self, text: str) -> np.ndarray:
        return self.encode_texts([text])[0]

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        missing_idx: list[int] = []
        missing_txt: list[str] = []
        for i, text in enumerate(texts):
            cached = self._cache.get(self._key(text))
            if cached is not None:
                out[i] = cached
            else:
                missing_idx.append(i)
                missing_txt.append(text)
        if missing_txt:
            if self._remote is not None:
                try:
                    fresh = self._remote.embed(missing_txt)
                except RemoteUnavailable:
                    if not self.fallback_to_hashed:
                        raise
                    fresh = np.stack([hashed_embedding(t, self.dim) for t in missing_txt])
            else:
                fresh = np.stack([hashed_embedding(t, self.dim) for t in missing_txt])
            for i, text, vec in zip(missing_idx, missing_txt, fresh):
                self._cache[self._key(text)] = vec
                out[i] = vec
        return out

    def encode_pair(self, u, v, relation: str) -> np.ndarray:
        """P(u,v): embedding of the rendered pair prompt, ordered (u, v)."""
        return self.encode_text(render_pair_prompt(u, v, relation, self.task_context))

    def encode_pairs(self, pairs, relation_of) -> np.ndarray:
        """Batch P(u,v) for (u_node, v_node) pairs; relation_of(i) names pair i."""
        texts = [render_pair_prompt(u, v, relation_of(i), self.task_context)
                 for i, (u, v) in enumerate(pairs)]
        return self.encode_texts(texts)
