"""Multi-modal feature extraction: text TF-IDF, metadata, and network signals.

The per-email vector is the concatenation text ⊕ meta ⊕ network with
d = 2*|vocab| + 4 + 3. Text features use raw term frequency with smoothed
idf ln((1+N)/(1+df)) + 1; meta and network features are z-scored against
statistics frozen when the featurizer is fitted.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import _serialize as ser
from .documents import EmailDocument
from .errors import CorruptFile, EmptyCorpus, NotFitted

# Lowercase Unicode letter/digit runs. Zero-width characters are not word
# characters, so an injected ZWJ splits a token; they are deliberately NOT
# stripped beforehand (obfuscation must stay observable downstream).
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

META_FEATURE_NAMES = ("meta:hour", "meta:weekday", "meta:body_length", "meta:attach_count")
NETWORK_FEATURE_NAMES = ("net:sender_rep", "net:domain_age", "net:url_count")

DEFAULT_SENDER_REP = 0.5
DEFAULT_DOMAIN_AGE = 0.0


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Capped term list ordered by descending document frequency, ties lexicographic."""

    terms: tuple[str, ...]
    document_frequencies: tuple[int, ...]
    corpus_size: int
    index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.terms)})

    def __len__(self):
        return len(self.terms)

    @property
    def idf(self) -> np.ndarray:
        df = np.asarray(self.document_frequencies, dtype=np.float64)
        return np.log((1.0 + self.corpus_size) / (1.0 + df)) + 1.0


def build_vocabulary(corpus: Sequence[EmailDocument], cap: int) -> Vocabulary:
    """Top-`cap` most document-frequent terms over subjects and bodies jointly."""
    if not corpus:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    if cap < 1:
        raise EmptyCorpus(f"vocabulary cap must be positive, got {cap}")
    df: dict[str, int] = {}
    for doc in corpus:
        seen = set(tokenize(doc.subject)) | set(tokenize(doc.body))
        for term in seen:
            df[term] = df.get(term, 0) + 1
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return Vocabulary(
        terms=tuple(t for t, _ in ranked),
        document_frequencies=tuple(n for _, n in ranked),
        corpus_size=len(corpus),
    )


class ReputationTable:
    """Local domain -> (reputation, age_days) map loaded from a TSV file."""

    def __init__(self, entries: Optional[dict[str, tuple[float, float]]] = None):
        self.entries = dict(entries or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "ReputationTable":
        entries = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorruptFile(f"reputation line needs 3 tab-separated fields", lineno)
            try:
                entries[parts[0].lower()] = (float(parts[1]), float(parts[2]))
            except ValueError as exc:
                raise CorruptFile(f"bad reputation record: {exc}", lineno) from exc
        return cls(entries)

    def sender_rep(self, domain: Optional[str]) -> float:
        if domain and domain in self.entries:
            return self.entries[domain][0]
        return DEFAULT_SENDER_REP

    def domain_age(self, domain: Optional[str]) -> float:
        if domain and domain in self.entries:
            return self.entries[domain][1]
        return DEFAULT_DOMAIN_AGE


@dataclass(frozen=True)
class Standardizer:
    """Frozen per-feature z-score parameters; zero std maps the feature to 0."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "Standardizer":
        return cls(mean=rows.mean(axis=0), std=rows.std(axis=0))

    def apply(self, raw: np.ndarray) -> np.ndarray:
        out = np.zeros_like(raw, dtype=np.float64)
        nz = self.std > 0
        out[..., nz] = (raw[..., nz] - self.mean[nz]) / self.std[nz]
        return out


@dataclass(frozen=True)
class FeatureVector:
    """text ⊕ meta ⊕ network concatenation; slices are views of `full`."""

    full: np.ndarray
    d_text: int
    d_meta: int = 4
    d_network: int = 3

    @property
    def text(self) -> np.ndarray:
        return self.full[: self.d_text]

    @property
    def meta(self) -> np.ndarray:
        return self.full[self.d_text: self.d_text + self.d_meta]

    @property
    def network(self) -> np.ndarray:
        return self.full[self.d_text + self.d_meta:]


def meta_raw(doc: EmailDocument) -> np.ndarray:
    """[hour, weekday(Mon=0), body chars, attachment count]; -1 hour/weekday when absent."""
    if doc.timestamp is None:
        hour, weekday = -1.0, -1.0
    else:
        dt = datetime.fromtimestamp(doc.timestamp, tz=timezone.utc)
        hour, weekday = float(dt.hour), float(dt.weekday())
    return np.array([hour, weekday, float(len(doc.body)), float(len(doc.attachments))])


def network_raw(doc: EmailDocument, reputation: ReputationTable) -> np.ndarray:
    return np.array([
        reputation.sender_rep(doc.sender_domain),
        reputation.domain_age(doc.sender_domain),
        float(len(doc.urls)),
    ])


def extract_text_features(doc: EmailDocument, vocab: Vocabulary) -> np.ndarray:
    """tf*idf per vocab term, subject half then body half; OOV tokens ignored."""
    n = len(vocab)
    out = np.zeros(2 * n, dtype=np.float64)
    idf = vocab.idf
    for offset, text in ((0, doc.subject), (n, doc.body)):
        for token in tokenize(text):
            i = vocab.index.get(token)
            if i is not None:
                out[offset + i] += idf[i]
    return out


def extract_meta_features(doc: EmailDocument, standardizer: Standardizer) -> np.ndarray:
    return standardizer.apply(meta_raw(doc))


def extract_network_features(doc: EmailDocument, reputation: ReputationTable,
                             standardizer: Standardizer) -> np.ndarray:
    return standardizer.apply(network_raw(doc, reputation))


class EmailFeaturizer(BaseEstimator, TransformerMixin):
    """Fits corpus statistics once, then maps documents to fixed-width vectors.

    fit() builds the vocabulary and freezes meta/network standardization;
    transform() returns an (n, d) float64 matrix. `featurize()` gives the
    sliced FeatureVector view for a single document.
    """

    def __init__(self, vocab_cap: int = 2000, reputation_path: Optional[str] = None):
        self.vocab_cap = vocab_cap
        self.reputation_path = reputation_path

    def fit(self, X: Sequence[EmailDocument], y=None):
        docs = _check_docs(X)
        self.reputation_ = (ReputationTable.from_file(self.reputation_path)
                            if self.reputation_path else ReputationTable())
        self.vocabulary_ = build_vocabulary(docs, self.vocab_cap)
        self.meta_standardizer_ = Standardizer.fit(
            np.stack([meta_raw(d) for d in docs]))
        self.network_standardizer_ = Standardizer.fit(
            np.stack([network_raw(d, self.reputation_) for d in docs]))
        return self

    def _require_fit(self):
        if not hasattr(self, "vocabulary_"):
            raise NotFitted("EmailFeaturizer.fit must run before transform")

    @property
    def n_features_(self) -> int:
        self._require_fit()
        return 2 * len(self.vocabulary_) + 4 + 3

    def featurize(self, doc: EmailDocument) -> FeatureVector:
        self._require_fit()
        full = np.concatenate([
            extract_text_features(doc, self.vocabulary_),
            extract_meta_features(doc, self.meta_standardizer_),
            extract_network_features(doc, self.reputation_, self.network_standardizer_),
        ])
        return FeatureVector(full=full, d_text=2 * len(self.vocabulary_))

    def transform(self, X: Sequence[EmailDocument]) -> np.ndarray:
        docs = _check_docs(X, allow_empty=True)
        self._require_fit()
        if not docs:
            return np.zeros((0, self.n_features_))
        return np.stack([self.featurize(d).full for d in docs])

    def feature_names(self) -> list[str]:
        self._require_fit()
        terms = self.vocabulary_.terms
        return ([f"subject:{t}" for t in terms] + [f"body:{t}" for t in terms]
                + list(META_FEATURE_NAMES) + list(NETWORK_FEATURE_NAMES))


def _check_docs(X, allow_empty: bool = False) -> list[EmailDocument]:
    docs = list(X)
    if not docs and not allow_empty:
        raise EmptyCorpus("no documents given")
    for d in docs:
        if not isinstance(d, EmailDocument):
            raise TypeError(f"expected EmailDocument, got {type(d).__name__}")
    return docs


# ---------------------------------------------------------------------------
# EVOMAIL-FEATURES v1: newline-delimited documents+features with the
# featurizer state up front, so a saved corpus reloads self-contained.

_KIND = "FEATURES"


def _doc_to_record(doc: EmailDocument) -> dict:
    return {
        "id": doc.id, "raw_hash": doc.raw_hash, "subject": doc.subject,
        "body": doc.body, "sender_address": doc.sender_address,
        "sender_domain": doc.sender_domain,
        "recipient_addresses": doc.recipient_addresses,
        "reply_to": doc.reply_to, "timestamp": doc.timestamp,
        "urls": [[u.raw, u.host, u.is_shortened, u.is_homograph_suspect]
                 for u in doc.urls],
        "attachments": [[a.filename, a.mime_type, a.digest, a.size_bytes]
                        for a in doc.attachments],
        "auth": [doc.auth_flags.spf_pass, doc.auth_flags.dkim_pass,
                 doc.auth_flags.dmarc_pass],
        "label": doc.label, "message_id": doc.message_id,
        "in_reply_to": doc.in_reply_to,
    }


def _doc_from_record(rec: dict) -> EmailDocument:
    from .documents import AttachmentRecord, AuthFlags, UrlRecord
    return EmailDocument(
        id=rec["id"], raw_hash=rec["raw_hash"], subject=rec["subject"],
        body=rec["body"], sender_address=rec["sender_address"],
        sender_domain=rec["sender_domain"],
        recipient_addresses=list(rec["recipient_addresses"]),
        reply_to=rec["reply_to"], timestamp=rec["timestamp"],
        urls=[UrlRecord(*u) for u in rec["urls"]],
        attachments=[AttachmentRecord(*a) for a in rec["attachments"]],
        auth_flags=AuthFlags(*rec["auth"]),
        label=rec["label"], message_id=rec["message_id"],
        in_reply_to=rec["in_reply_to"],
    )


def featurizer_state(featurizer: EmailFeaturizer) -> dict:
    featurizer._require_fit()
    return {
        "vocab_cap": featurizer.vocab_cap,
        "terms": list(featurizer.vocabulary_.terms),
        "document_frequencies": list(featurizer.vocabulary_.document_frequencies),
        "corpus_size": featurizer.vocabulary_.corpus_size,
        "meta_mean": ser.array_to_b64(featurizer.meta_standardizer_.mean),
        "meta_std": ser.array_to_b64(featurizer.meta_standardizer_.std),
        "net_mean": ser.array_to_b64(featurizer.network_standardizer_.mean),
        "net_std": ser.array_to_b64(featurizer.network_standardizer_.std),
        "reputation": {k: list(v) for k, v in featurizer.reputation_.entries.items()},
    }


def featurizer_from_state(state: dict) -> EmailFeaturizer:
    fz = EmailFeaturizer(vocab_cap=state["vocab_cap"])
    fz.vocabulary_ = Vocabulary(
        terms=tuple(state["terms"]),
        document_frequencies=tuple(state["document_frequencies"]),
        corpus_size=state["corpus_size"],
    )
    fz.meta_standardizer_ = Standardizer(
        mean=ser.b64_to_array(state["meta_mean"], (4,)),
        std=ser.b64_to_array(state["meta_std"], (4,)))
    fz.network_standardizer_ = Standardizer(
        mean=ser.b64_to_array(state["net_mean"], (3,)),
        std=ser.b64_to_array(state["net_std"], (3,)))
    fz.reputation_ = ReputationTable({k: tuple(v) for k, v in state["reputation"].items()})
    return fz


def save_features(path: str | Path, docs: Sequence[EmailDocument],
                  featurizer: EmailFeaturizer) -> None:
    lines = [ser.format_header(_KIND), ser.json_line(featurizer_state(featurizer))]
    for doc in docs:
        rec = _doc_to_record(doc)
        rec["features"] = ser.array_to_b64(featurizer.featurize(doc).full)
        lines.append(ser.json_line(rec))
    ser.atomic_write_text(path, "\n".join(lines) + "\n")


def load_features(path: str | Path) -> tuple[list[EmailDocument], EmailFeaturizer, np.ndarray]:
    lines = ser.read_lines(path, _KIND)
    if not lines:
        raise CorruptFile("missing featurizer record", 1)
    featurizer = featurizer_from_state(ser.parse_json_line(lines[0], 1))
    d = featurizer.n_features_
    docs, rows = [], []
    for i, line in enumerate(lines[1:], 2):
        rec = ser.parse_json_line(line, i)
        try:
            docs.append(_doc_from_record(rec))
            rows.append(ser.b64_to_array(rec["features"], (d,), i))
        except (KeyError, TypeError) as exc:
            raise CorruptFile(f"bad document record: {exc}", i) from exc
    features = np.stack(rows) if rows else np.zeros((0, d))
    return docs, featurizer, features
