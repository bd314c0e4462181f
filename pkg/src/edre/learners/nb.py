"""Multinomial naive Bayes with additive (Laplace) smoothing."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

NB_DEFAULTS = {"alpha": 1.0}


def fit_naive_bayes(X, y: np.ndarray, n_classes: int, config: dict, rng=None) -> dict:
    alpha = float(config["alpha"])
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    Y = np.eye(n_classes)[y]
    counts = np.asarray((sp.csr_matrix(X).T @ Y).T) if sp.issparse(X) else Y.T @ np.asarray(X)
    smoothed = counts + alpha
    feature_log_prob = np.log(smoothed) - np.log(smoothed.sum(axis=1, keepdims=True))
    class_count = Y.sum(axis=0)
    return {
        "feature_log_prob": feature_log_prob,
        "class_log_prior": np.log(class_count) - np.log(class_count.sum()),
    }


def joint_log_likelihood(params: dict, X) -> np.ndarray:
    jll = X @ params["feature_log_prob"].T
    return np.asarray(jll) + params["class_log_prior"]


def naive_bayes_scores(params: dict, X) -> np.ndarray:
    """Class posteriors, normalized in log space."""
    jll = joint_log_likelihood(params, X)
    top = jll.max(axis=1, keepdims=True)
    log_norm = top + np.log(np.exp(jll - top).sum(axis=1, keepdims=True))
    return np.exp(jll - log_norm)
