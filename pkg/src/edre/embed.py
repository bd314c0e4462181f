"""Term vocabulary, TF-IDF document vectors and precomputed dense vectors."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from edre.serial import decode_array, encode_array, fingerprint
from edre.textprep import PrepConfig, TokenDoc


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Vector with explicit nonzero entries; ``indices`` strictly increasing."""

    dimension: int
    indices: np.ndarray
    values: np.ndarray
    fingerprint: str | None = None

    @property
    def entries(self) -> dict:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    @property
    def is_empty(self) -> bool:
        return self.indices.size == 0

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dimension)
        out[self.indices] = self.values
        return out

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.indices, np.array([0, self.indices.size])), shape=(1, self.dimension)
        )

    @classmethod
    def from_entries(cls, dimension: int, entries: dict, fingerprint: str | None = None) -> "SparseVector":
        idx = np.array(sorted(entries), dtype=np.int64)
        vals = np.array([entries[i] for i in idx], dtype=float)
        if idx.size and (idx[0] < 0 or idx[-1] >= dimension):
            raise EmbeddingError(f"index out of range for dimension {dimension}")
        return cls(dimension, idx, vals, fingerprint)


@dataclass(frozen=True, eq=False)
class DenseVector:
    values: np.ndarray
    fingerprint: str | None = None

    @property
    def dimension(self) -> int:
        return self.values.shape[0]

    @property
    def is_empty(self) -> bool:
        return not np.any(self.values)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def to_dense(self) -> np.ndarray:
        return self.values


def csr_row(matrix: sp.csr_matrix, i: int, fingerprint: str | None = None) -> SparseVector:
    lo, hi = matrix.indptr[i], matrix.indptr[i + 1]
    return SparseVector(matrix.shape[1], matrix.indices[lo:hi].astype(np.int64), matrix.data[lo:hi].copy(), fingerprint)


def stack_vectors(vectors: Sequence) -> sp.csr_matrix | np.ndarray:
    """Stack same-kind vectors into a CSR matrix (sparse) or 2-D array (dense)."""
    if not vectors:
        raise EmbeddingError("no vectors to stack")
    if all(isinstance(v, SparseVector) for v in vectors):
        dims = {v.dimension for v in vectors}
        if len(dims) != 1:
            raise EmbeddingError(f"vectors have mixed dimensions {sorted(dims)}")
        indptr = np.cumsum([0] + [v.indices.size for v in vectors])
        indices = np.concatenate([v.indices for v in vectors]) if indptr[-1] else np.zeros(0, np.int64)
        data = np.concatenate([v.values for v in vectors]) if indptr[-1] else np.zeros(0)
        return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), dims.pop()))
    if all(isinstance(v, (DenseVector, np.ndarray)) for v in vectors):
        rows = [v.values if isinstance(v, DenseVector) else np.asarray(v, float) for v in vectors]
        if len({r.shape for r in rows}) != 1:
            raise EmbeddingError("dense vectors have mixed dimensions")
        return np.vstack(rows).astype(float)
    raise EmbeddingError("cannot mix sparse and dense vectors")


# --------------------------------------------------------------------------
# TF-IDF

@dataclass(frozen=True, eq=False)
class Vocabulary:
    terms: tuple
    doc_freq: np.ndarray
    n_docs: int
    min_df: int = 1
    prep: PrepConfig | None = field(default=None)

    @cached_property
    def term_index(self) -> dict:
        return {t: i for i, t in enumerate(self.terms)}

    @property
    def dimension(self) -> int:
        return len(self.terms)

    def df(self, term: str) -> int:
        return int(self.doc_freq[self.term_index[term]])

    @cached_property
    def idf_weights(self) -> np.ndarray:
        # smoothed: ln((1 + N) / (1 + df)) + 1
        return np.log((1.0 + self.n_docs) / (1.0 + self.doc_freq)) + 1.0

    def to_dict(self) -> dict:
        return {
            "terms": list(self.terms),
            "doc_freq": [int(x) for x in self.doc_freq],
            "n_docs": self.n_docs,
            "min_df": self.min_df,
            "prep": self.prep.to_dict() if self.prep is not None else None,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Vocabulary":
        prep = PrepConfig.from_dict(obj["prep"]) if obj.get("prep") else None
        return cls(tuple(obj["terms"]), np.array(obj["doc_freq"], dtype=np.int64), obj["n_docs"], obj["min_df"], prep)

    @cached_property
    def fingerprint(self) -> str:
        return "tfidf:" + fingerprint(self.to_dict())


def build_vocabulary(docs: Sequence[TokenDoc], min_df: int = 1, prep: PrepConfig | None = None) -> Vocabulary:
    if not docs:
        raise EmbeddingError("cannot build a vocabulary from zero documents")
    df = Counter()
    for doc in docs:
        df.update(set(doc.features))
    terms = sorted(t for t, n in df.items() if n >= min_df)
    return Vocabulary(tuple(terms), np.array([df[t] for t in terms], dtype=np.int64), len(docs), min_df, prep)


def idf(term: str, vocab: Vocabulary) -> float:
    try:
        return float(vocab.idf_weights[vocab.term_index[term]])
    except KeyError:
        raise EmbeddingError(f"term {term!r} is not in the vocabulary") from None


def tfidf_matrix(docs: Sequence[TokenDoc], vocab: Vocabulary) -> sp.csr_matrix:
    """L2-normalized TF-IDF rows for ``docs``; out-of-vocabulary terms are ignored."""
    index = vocab.term_index
    indptr = [0]
    indices: list[int] = []
    counts: list[int] = []
    for doc in docs:
        tf = Counter(index[t] for t in doc.features if t in index)
        cols = sorted(tf)
        indices.extend(cols)
        counts.extend(tf[c] for c in cols)
        indptr.append(len(indices))
    indices_arr = np.array(indices, dtype=np.int64)
    weights = np.array(counts, dtype=float) * vocab.idf_weights[indices_arr]
    matrix = sp.csr_matrix((weights, indices_arr, np.array(indptr)), shape=(len(docs), vocab.dimension))
    norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
    row_of_entry = np.repeat(np.arange(len(docs)), np.diff(matrix.indptr))
    if matrix.nnz:
        matrix.data = matrix.data / norms[row_of_entry]
    return matrix


def tfidf_vector(doc: TokenDoc, vocab: Vocabulary) -> SparseVector:
    return csr_row(tfidf_matrix([doc], vocab), 0, vocab.fingerprint)


# --------------------------------------------------------------------------
# precomputed dense vectors

@dataclass(frozen=True, eq=False)
class ExternalEmbedding:
    ids: tuple
    matrix: np.ndarray
    name: str = "external"

    @cached_property
    def row_of(self) -> dict:
        return {rid: i for i, rid in enumerate(self.ids)}

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def __contains__(self, review_id: str) -> bool:
        return review_id in self.row_of

    def vector(self, review_id: str) -> DenseVector:
        try:
            return DenseVector(self.matrix[self.row_of[review_id]], self.fingerprint)
        except KeyError:
            raise EmbeddingError(f"review {review_id!r} has no external vector") from None

    @cached_property
    def fingerprint(self) -> str:
        return f"{self.name}:" + fingerprint({"ids": list(self.ids), "matrix": encode_array(self.matrix)})

    def to_dict(self) -> dict:
        return {"ids": list(self.ids), "matrix": encode_array(self.matrix), "name": self.name}

    @classmethod
    def from_dict(cls, obj: dict) -> "ExternalEmbedding":
        return cls(tuple(obj["ids"]), decode_array(obj["matrix"]), obj.get("name", "external"))


def load_external_vectors(path: str | Path, name: str | None = None) -> ExternalEmbedding:
    """Read ``review_id<TAB>v1 v2 ... vd`` rows into an external embedding."""
    path = Path(path)
    ids: list[str] = []
    rows: list[np.ndarray] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            rid, sep, rest = line.partition("\t")
            if not sep or not rid:
                raise EmbeddingError(f"{path}:{lineno}: expected 'review_id<TAB>values'")
            try:
                vec = np.array([float(x) for x in rest.split()], dtype=float)
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: non-numeric value in row {rid!r}") from None
            if vec.size == 0:
                raise EmbeddingError(f"{path}:{lineno}: row {rid!r} has no values")
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"{path}:{lineno}: row {rid!r} has non-finite values")
            if rows and vec.size != rows[0].size:
                raise EmbeddingError(
                    f"{path}:{lineno}: row {rid!r} has dimension {vec.size}, expected {rows[0].size}"
                )
            if rid in seen:
                raise EmbeddingError(f"{path}:{lineno}: duplicate review id {rid!r} (first on line {seen[rid]})")
            seen[rid] = lineno
            ids.append(rid)
            rows.append(vec)
    if not rows:
        raise EmbeddingError(f"{path}: no vectors")
    return ExternalEmbedding(tuple(ids), np.vstack(rows), name or path.stem)


def save_external_vectors(embedding: ExternalEmbedding, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid, row in zip(embedding.ids, embedding.matrix):
            fh.write(rid + "\t" + " ".join(repr(float(x)) for x in row) + "\n")
