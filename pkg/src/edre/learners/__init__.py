"""The five clarity classifiers behind one train/predict surface.

Models remember the embedding they were trained on (its fingerprint and
dimension) and refuse vectors from any other space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from edre.corpus import Clarity
from edre.embed import DenseVector, SparseVector, Vocabulary, stack_vectors
from edre.learners.logreg import LOGREG_DEFAULTS, fit_logreg, logreg_scores
from edre.learners.nb import NB_DEFAULTS, fit_naive_bayes, naive_bayes_scores
from edre.learners.svm import SVM_DEFAULTS, fit_svm, svm_scores
from edre.learners.trees import GBRT_DEFAULTS, RF_DEFAULTS, fit_gbrt, fit_random_forest, gbrt_scores, random_forest_scores
from edre.serial import FormatError, canonical_dumps, decode_array, encode_array, read_document, write_document

FORMAT_VERSION = 1


class Algorithm(str, Enum):
    NB = "nb"
    LOGREG = "logreg"
    SVM = "svm"
    RF = "rf"
    GBRT = "gbrt"

    @classmethod
    def parse(cls, value) -> "Algorithm":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            allowed = ", ".join(a.value for a in cls)
            raise ValueError(f"unknown algorithm {value!r}; choose one of {allowed}") from None


class TrainingError(ValueError):
    pass


class EmbeddingMismatchError(ValueError):
    pass


_TRAINERS = {
    Algorithm.NB: (fit_naive_bayes, naive_bayes_scores, NB_DEFAULTS, "probability"),
    Algorithm.LOGREG: (fit_logreg, logreg_scores, LOGREG_DEFAULTS, "probability"),
    Algorithm.SVM: (fit_svm, svm_scores, SVM_DEFAULTS, "margin"),
    Algorithm.RF: (fit_random_forest, random_forest_scores, RF_DEFAULTS, "vote_fraction"),
    Algorithm.GBRT: (fit_gbrt, gbrt_scores, GBRT_DEFAULTS, "logit"),
}

DEFAULT_GRIDS = {
    Algorithm.NB: {"alpha": [0.1, 0.5, 1.0]},
    Algorithm.LOGREG: {"l2": [0.0001, 0.001, 0.01]},
    Algorithm.SVM: {"C": [0.1, 1, 10], "epochs": [5, 20]},
    Algorithm.RF: {"n_trees": [50, 100], "max_depth": [8, 12]},
    Algorithm.GBRT: {"n_rounds": [50, 100], "learning_rate": [0.05, 0.1]},
}


def default_config(algorithm) -> dict:
    return dict(_TRAINERS[Algorithm.parse(algorithm)][2])


def resolve_config(algorithm, config: dict | None) -> dict:
    algorithm = Algorithm.parse(algorithm)
    merged = default_config(algorithm)
    for key, value in (config or {}).items():
        if key not in merged:
            raise TrainingError(f"unknown hyperparameter {key!r} for {algorithm.value}; known: {sorted(merged)}")
        merged[key] = value
    return merged


@dataclass
class TrainSet:
    vectors: list
    labels: list
    review_ids: list

    def __post_init__(self):
        if not (len(self.vectors) == len(self.labels) == len(self.review_ids)):
            raise TrainingError("vectors, labels and review_ids must have equal length")
        if not self.vectors:
            raise TrainingError("training set is empty")


@dataclass(frozen=True)
class ScoreVector:
    classes: tuple
    values: np.ndarray
    kind: str
    low_confidence: bool = False

    def as_dict(self) -> dict:
        return {c.label: float(v) for c, v in zip(self.classes, self.values)}


@dataclass(eq=False)
class TrainedModel:
    algorithm: Algorithm
    classes: tuple
    parameters: dict
    embedding_fingerprint: str
    dimension: int
    seed: int
    config: dict
    class_prior: np.ndarray
    embedding: Vocabulary | None = None
    format_version: int = FORMAT_VERSION
    score_kind: str = field(init=False)

    def __post_init__(self):
        self.score_kind = _TRAINERS[self.algorithm][3]


# --------------------------------------------------------------------------
# training

def _check_finite(X):
    data = X.data if sp.issparse(X) else X
    if not np.all(np.isfinite(data)):
        raise TrainingError("feature values must be finite")


def _encode_labels(labels: Sequence) -> tuple[tuple, np.ndarray]:
    labels = [Clarity(int(c)) for c in labels]
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise TrainingError(f"training needs at least 2 distinct labels, got {[c.label for c in classes]}")
    position = {c: i for i, c in enumerate(classes)}
    return classes, np.array([position[c] for c in labels], dtype=np.int64)


def train_matrix(
    algorithm,
    X,
    labels: Sequence,
    config: dict | None = None,
    seed: int = 0,
    embedding_fingerprint: str = "",
    embedding: Vocabulary | None = None,
) -> TrainedModel:
    """Train on a stacked feature matrix (CSR or dense) with aligned labels."""
    algorithm = Algorithm.parse(algorithm)
    config = resolve_config(algorithm, config)
    if X.shape[0] != len(labels) or X.shape[0] == 0:
        raise TrainingError("feature matrix and labels must be nonempty and aligned")
    _check_finite(X)
    classes, y = _encode_labels(labels)
    if algorithm is Algorithm.NB:
        data = X.data if sp.issparse(X) else X
        if data.size and data.min() < 0:
            raise TrainingError("naive Bayes needs nonnegative features")
    fit = _TRAINERS[algorithm][0]
    rng = np.random.default_rng(seed)
    try:
        params = fit(X, y, len(classes), config, rng)
    except ValueError as exc:
        raise TrainingError(str(exc)) from exc
    counts = np.bincount(y, minlength=len(classes)).astype(float)
    return TrainedModel(
        algorithm=algorithm,
        classes=classes,
        parameters=params,
        embedding_fingerprint=embedding_fingerprint,
        dimension=X.shape[1],
        seed=int(seed),
        config=config,
        class_prior=counts / counts.sum(),
        embedding=embedding,
    )


def train(algorithm, data: TrainSet, config: dict | None = None, seed: int = 0, embedding=None) -> TrainedModel:
    X = stack_vectors(data.vectors)
    fingerprints = {v.fingerprint for v in data.vectors if getattr(v, "fingerprint", None)}
    if len(fingerprints) > 1:
        raise TrainingError("training vectors come from different embeddings")
    fp = fingerprints.pop() if fingerprints else (embedding.fingerprint if embedding is not None else "")
    vocab = embedding if isinstance(embedding, Vocabulary) else None
    return train_matrix(algorithm, X, data.labels, config, seed, fp, vocab)


# --------------------------------------------------------------------------
# prediction

def _argmax_less_clear(scores: np.ndarray) -> np.ndarray:
    # classes are stored least-clear first and argmax keeps the first maximum
    return np.argmax(scores, axis=1)


def predict_matrix(model: TrainedModel, X) -> tuple[list, np.ndarray, np.ndarray]:
    """Labels, score rows and low-confidence mask for every row of ``X``.

    Rows without any nonzero entry are answered from the class prior.
    """
    if X.shape[1] != model.dimension:
        raise EmbeddingMismatchError(f"vector dimension {X.shape[1]} does not match model dimension {model.dimension}")
    _check_finite(X)
    scores = _TRAINERS[model.algorithm][1](model.parameters, X)
    if sp.issparse(X):
        empty = np.diff(sp.csr_matrix(X).indptr) == 0
    else:
        empty = ~np.any(np.asarray(X) != 0, axis=1)
    if empty.any():
        scores = scores.copy()
        scores[empty] = model.class_prior
    idx = _argmax_less_clear(scores)
    return [model.classes[i] for i in idx], scores, empty


def predict(model: TrainedModel, vector) -> tuple[Clarity, ScoreVector]:
    fp = getattr(vector, "fingerprint", None)
    if fp and model.embedding_fingerprint and fp != model.embedding_fingerprint:
        raise EmbeddingMismatchError(
            f"vector embedding {fp} does not match model embedding {model.embedding_fingerprint}"
        )
    if isinstance(vector, SparseVector):
        X = vector.to_csr()
    elif isinstance(vector, DenseVector):
        X = vector.values[None, :]
    else:
        X = np.asarray(vector, dtype=float)[None, :]
    labels, scores, empty = predict_matrix(model, X)
    kind = "prior" if empty[0] else model.score_kind
    return labels[0], ScoreVector(model.classes, scores[0], kind, bool(empty[0]))


# --------------------------------------------------------------------------
# persistence

def _encode_tree(obj):
    if isinstance(obj, np.ndarray):
        return {"__array__": encode_array(obj)}
    if isinstance(obj, dict):
        return {k: _encode_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode_tree(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode_tree(obj):
    if isinstance(obj, dict):
        if set(obj) == {"__array__"}:
            return decode_array(obj["__array__"])
        return {k: _decode_tree(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_tree(v) for v in obj]
    return obj


def model_to_dict(model: TrainedModel) -> tuple[dict, dict]:
    header = {
        "algorithm": model.algorithm.value,
        "classes": [c.label for c in model.classes],
        "embedding_fingerprint": model.embedding_fingerprint,
        "dimension": model.dimension,
        "seed": model.seed,
        "score_kind": model.score_kind,
    }
    body = {
        "config": _encode_tree(model.config),
        "class_prior": _encode_tree(model.class_prior),
        "parameters": _encode_tree(model.parameters),
        "embedding": model.embedding.to_dict() if model.embedding is not None else None,
    }
    return header, body


def model_bytes(model: TrainedModel) -> bytes:
    header, body = model_to_dict(model)
    return canonical_dumps({"header": header, "body": body}).encode("ascii")


def save_model(model: TrainedModel, path) -> None:
    header, body = model_to_dict(model)
    write_document(path, "edre-model", model.format_version, header, body)


def load_model(path) -> TrainedModel:
    header, body = read_document(path, "edre-model", FORMAT_VERSION)
    try:
        embedding = Vocabulary.from_dict(body["embedding"]) if body.get("embedding") else None
        return TrainedModel(
            algorithm=Algorithm.parse(header["algorithm"]),
            classes=tuple(Clarity.parse(c) for c in header["classes"]),
            parameters=_decode_tree(body["parameters"]),
            embedding_fingerprint=header["embedding_fingerprint"],
            dimension=int(header["dimension"]),
            seed=int(header["seed"]),
            config=_decode_tree(body["config"]),
            class_prior=_decode_tree(body["class_prior"]),
            embedding=embedding,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: corrupt model file ({exc})") from None


__all__ = [
    "Algorithm", "DEFAULT_GRIDS", "EmbeddingMismatchError", "ScoreVector", "TrainSet", "TrainedModel",
    "TrainingError", "default_config", "load_model", "model_bytes", "predict", "predict_matrix",
    "resolve_config", "save_model", "train", "train_matrix"
]
