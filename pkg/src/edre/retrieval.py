"""Cosine-similarity retrieval of clear example reviews."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from edre.corpus import Clarity, LabeledReview, needs_explanation
from edre.embed import (
    DenseVector,
    EmbeddingError,
    ExternalEmbedding,
    SparseVector,
    Vocabulary,
    build_vocabulary,
    stack_vectors,
    tfidf_matrix,
    tfidf_vector,
)
from edre.learners import EmbeddingMismatchError, ScoreVector, TrainedModel, predict
from edre.serial import FormatError, decode_array, encode_array, read_document, write_document
from edre.textprep import PrepConfig, preprocess, preprocess_text

log = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1
ELIGIBLE = (Clarity.CLEAR, Clarity.SOMEWHAT_CLEAR)


class RetrievalError(ValueError):
    pass


def _dense(v) -> np.ndarray:
    if isinstance(v, (SparseVector, DenseVector)):
        return v.to_dense()
    return np.asarray(v, dtype=float)


def cosine(u, v) -> float:
    """dot(u, v) / (|u| |v|), or 0 when either vector is zero."""
    if isinstance(u, SparseVector) and isinstance(v, SparseVector):
        if u.dimension != v.dimension:
            raise RetrievalError(f"dimension mismatch: {u.dimension} vs {v.dimension}")
        common, iu, iv = np.intersect1d(u.indices, v.indices, assume_unique=True, return_indices=True)
        dot = float(np.dot(u.values[iu], v.values[iv]))
        nu, nv = u.norm(), v.norm()
    else:
        a, b = _dense(u), _dense(v)
        if a.shape != b.shape:
            raise RetrievalError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
        dot = float(np.dot(a, b))
        nu, nv = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(dot / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class IndexEntry:
    review_id: str
    clarity: Clarity
    body: str
    thread_url: str
    project: str = ""


@dataclass(frozen=True)
class ExampleHit:
    review_id: str
    similarity: float
    body: str
    thread_url: str
    rank: int
    clarity: Clarity = Clarity.CLEAR

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "review_id": self.review_id,
            "similarity": self.similarity,
            "clarity": self.clarity.label,
            "body": self.body,
            "thread_url": self.thread_url,
        }


class RetrievalIndex:
    """Eligible example reviews with their vectors, stored as one row-normalized matrix.

    Immutable after construction, so concurrent queries need no locking.
    """

    def __init__(
        self,
        embedding_fingerprint: str,
        entries: Sequence[IndexEntry],
        matrix,
        min_similarity: float = 0.1,
        embedding: Vocabulary | ExternalEmbedding | None = None,
    ):
        if matrix.shape[0] != len(entries):
            raise RetrievalError("index matrix and entries differ in length")
        if any(e.clarity not in ELIGIBLE for e in entries):
            raise RetrievalError("index entries must be clear or somewhat clear")
        if min_similarity < 0:
            raise RetrievalError("min_similarity must be non-negative")
        self.embedding_fingerprint = embedding_fingerprint
        self.entries = tuple(entries)
        self.min_similarity = float(min_similarity)
        self.embedding = embedding
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix, dtype=float)
            norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
        else:
            matrix = np.asarray(matrix, dtype=float)
            norms = np.linalg.norm(matrix, axis=1)
        self.matrix = matrix
        self.norms = norms
        self.dimension = matrix.shape[1]
        self._ids = np.array([e.review_id for e in self.entries], dtype=object)
        self._projects = np.array([e.project for e in self.entries], dtype=object)

    def __len__(self) -> int:
        return len(self.entries)

    def similarities(self, query) -> np.ndarray:
        q = _dense(query)
        if q.shape != (self.dimension,):
            raise RetrievalError(f"query dimension {q.shape[0]} does not match index dimension {self.dimension}")
        q_norm = float(np.linalg.norm(q))
        if len(self) == 0 or q_norm == 0.0:
            return np.zeros(len(self))
        dots = np.asarray(self.matrix @ q).ravel()
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = np.where(self.norms > 0, dots / (self.norms * q_norm), 0.0)
        return np.clip(sims, -1.0, 1.0)


def build_index(
    corpus: Sequence[LabeledReview],
    embedding: Vocabulary | ExternalEmbedding,
    min_similarity: float = 0.1,
    prep: PrepConfig | None = None,
) -> RetrievalIndex:
    """Index the clear and somewhat clear reviews that have a nonempty vector."""
    eligible = [r for r in corpus if r.clarity in ELIGIBLE]
    if isinstance(embedding, ExternalEmbedding):
        for r in eligible:
            if r.id not in embedding:
                raise RetrievalError(f"external embedding has no vector for review {r.id!r}")
        rows = [embedding.vector(r.id).values for r in eligible]
        matrix = np.vstack(rows) if rows else np.zeros((0, embedding.dimension))
        nonempty = np.any(matrix != 0, axis=1)
    elif isinstance(embedding, Vocabulary):
        prep = prep or embedding.prep or PrepConfig()
        matrix = tfidf_matrix([preprocess(r.comment, prep) for r in eligible], embedding)
        nonempty = np.diff(matrix.indptr) > 0
    else:
        raise RetrievalError(f"unsupported embedding {type(embedding).__name__}")

    skipped = int((~nonempty).sum())
    keep = np.flatnonzero(nonempty)
    if not eligible:
        log.warning("no clear or somewhat clear reviews; the index is empty")
    elif skipped:
        log.warning("excluded %d eligible reviews with an empty vector", skipped)
    entries = [
        IndexEntry(eligible[i].id, eligible[i].clarity, eligible[i].body, eligible[i].comment.thread_url, eligible[i].comment.project)
        for i in keep
    ]
    log.info("indexed %d of %d reviews", len(entries), len(corpus))
    return RetrievalIndex(embedding.fingerprint, entries, matrix[keep], min_similarity, embedding)


def top_k(index: RetrievalIndex, query, k: int = 5, project: str | None = None) -> list[ExampleHit]:
    """The ``k`` most similar entries at or above the similarity floor.

    Ties in similarity go to the lexicographically smaller review id.
    """
    fp = getattr(query, "fingerprint", None)
    if fp and index.embedding_fingerprint and fp != index.embedding_fingerprint:
        raise EmbeddingMismatchError(f"query embedding {fp} does not match index embedding {index.embedding_fingerprint}")
    sims = index.similarities(query)
    if k <= 0 or len(index) == 0 or not np.any(_dense(query)):
        # a zero query is similar to nothing, whatever the floor
        return []
    mask = sims >= index.min_similarity
    if project is not None:
        mask &= index._projects == project
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        return []
    # lexsort: last key is primary
    order = cand[np.lexsort((index._ids[cand].astype(str), -sims[cand]))][:k]
    hits = []
    for rank, i in enumerate(order, 1):
        e = index.entries[i]
        hits.append(ExampleHit(e.review_id, float(sims[i]), e.body, e.thread_url, rank, e.clarity))
    return hits


@dataclass(frozen=True)
class Decision:
    clarity: Clarity
    scores: ScoreVector
    hits: tuple
    low_confidence: bool = False

    @property
    def needs_explanation(self) -> bool:
        return needs_explanation(self.clarity)

    def to_dict(self) -> dict:
        return {
            "clarity": self.clarity.label,
            "needs_explanation": self.needs_explanation,
            "low_confidence": self.low_confidence,
            "score_kind": self.scores.kind,
            "scores": self.scores.as_dict(),
            "hits": [h.to_dict() for h in self.hits],
        }


def vectorize(body: str, model: TrainedModel, prep: PrepConfig | None = None):
    vocab = model.embedding
    if vocab is None:
        raise RetrievalError("model does not carry a TF-IDF vocabulary; text cannot be vectorized")
    prep = prep or vocab.prep or PrepConfig()
    return tfidf_vector(preprocess_text(body, prep), vocab)


def explain(
    body: str,
    model: TrainedModel,
    index: RetrievalIndex,
    prep: PrepConfig | None = None,
    k: int = 5,
    project: str | None = None,
) -> Decision:
    """Classify ``body``; for unclear predictions attach the top-k clear examples."""
    if model.embedding_fingerprint != index.embedding_fingerprint:
        raise EmbeddingMismatchError(
            f"model embedding {model.embedding_fingerprint} does not match index embedding {index.embedding_fingerprint}"
        )
    vector = vectorize(body, model, prep)
    clarity, scores = predict(model, vector)
    if scores.low_confidence or not needs_explanation(clarity):
        return Decision(clarity, scores, (), scores.low_confidence)
    return Decision(clarity, scores, tuple(top_k(index, vector, k, project)), False)


# --------------------------------------------------------------------------
# persistence

def save_index(index: RetrievalIndex, path) -> None:
    header = {
        "embedding_fingerprint": index.embedding_fingerprint,
        "min_similarity": index.min_similarity,
        "entry_count": len(index),
        "dimension": index.dimension,
    }
    if sp.issparse(index.matrix):
        m = index.matrix
        vectors = {
            "kind": "csr",
            "indptr": encode_array(m.indptr),
            "indices": encode_array(m.indices),
            "data": encode_array(m.data),
        }
    else:
        vectors = {"kind": "dense", "matrix": encode_array(index.matrix)}
    emb = index.embedding
    body = {
        "entries": [
            {"review_id": e.review_id, "clarity": e.clarity.label, "body": e.body, "thread_url": e.thread_url, "project": e.project}
            for e in index.entries
        ],
        "vectors": vectors,
        "embedding": None if emb is None else {
            "type": "tfidf" if isinstance(emb, Vocabulary) else "external",
            "value": emb.to_dict(),
        },
    }
    write_document(path, "edre-index", INDEX_FORMAT_VERSION, header, body)


def load_index(path) -> RetrievalIndex:
    header, body = read_document(path, "edre-index", INDEX_FORMAT_VERSION)
    try:
        entries = [
            IndexEntry(e["review_id"], Clarity.parse(e["clarity"]), e["body"], e["thread_url"], e.get("project", ""))
            for e in body["entries"]
        ]
        vec = body["vectors"]
        dim = int(header["dimension"])
        if vec["kind"] == "csr":
            matrix = sp.csr_matrix(
                (decode_array(vec["data"]), decode_array(vec["indices"]), decode_array(vec["indptr"])),
                shape=(len(entries), dim),
            )
        else:
            matrix = decode_array(vec["matrix"]).reshape(len(entries), dim)
        emb = body.get("embedding")
        embedding = None
        if emb:
            embedding = Vocabulary.from_dict(emb["value"]) if emb["type"] == "tfidf" else ExternalEmbedding.from_dict(emb["value"])
        if len(entries) != int(header["entry_count"]):
            raise ValueError("entry count does not match header")
        return RetrievalIndex(header["embedding_fingerprint"], entries, matrix, header["min_similarity"], embedding)
    except (KeyError, TypeError, ValueError, EmbeddingError) as exc:
        raise FormatError(f"{path}: corrupt index file ({exc})") from None


__all__ = [
    "Decision", "ExampleHit", "IndexEntry", "RetrievalError", "RetrievalIndex", "build_index", "build_vocabulary",
    "cosine", "explain", "load_index", "save_index", "stack_vectors", "top_k", "vectorize",
]
