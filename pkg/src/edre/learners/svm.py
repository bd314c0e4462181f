"""One-vs-rest linear SVM trained with stochastic subgradient steps on the
L2-regularized hinge loss (Pegasos schedule)."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

SVM_DEFAULTS = {"C": 1.0, "epochs": 20}


def fit_svm(X, y: np.ndarray, n_classes: int, config: dict, rng: np.random.Generator) -> dict:
    C = float(config["C"])
    epochs = int(config["epochs"])
    if C <= 0 or epochs < 1:
        raise ValueError("C must be positive and epochs >= 1")
    n, d = X.shape
    lam = 1.0 / (C * n)
    signs = np.where(np.eye(n_classes, dtype=bool)[y], 1.0, -1.0)

    # rows as (indices, values) with a trailing constant feature for the bias
    if sp.issparse(X):
        X = sp.csr_matrix(X)
        rows = [
            (np.append(X.indices[X.indptr[i]:X.indptr[i + 1]], d), np.append(X.data[X.indptr[i]:X.indptr[i + 1]], 1.0))
            for i in range(n)
        ]
    else:
        X = np.asarray(X, dtype=float)
        full = np.arange(d + 1)
        rows = [(full, np.append(X[i], 1.0)) for i in range(n)]

    # W = scale * V keeps the shrink step O(1)
    V = np.zeros((n_classes, d + 1))
    scale = 1.0
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            idx, vals = rows[i]
            margins = signs[i] * (scale * (V[:, idx] @ vals))
            shrink = 1.0 - eta * lam
            if shrink <= 0.0:
                V[:] = 0.0
                scale = 1.0
            else:
                scale *= shrink
            violated = np.flatnonzero(margins < 1.0)
            if violated.size:
                V[np.ix_(violated, idx)] += (eta / scale) * signs[i, violated, None] * vals
            if scale < 1e-9:
                V *= scale
                scale = 1.0
    W = scale * V
    return {"W": W[:, :d].copy(), "b": W[:, d].copy()}


def svm_scores(params: dict, X) -> np.ndarray:
    """Signed margins ``w_c . x + b_c``."""
    return np.asarray(X @ params["W"].T) + params["b"]
