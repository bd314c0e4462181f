"""Multinomial (softmax) logistic regression trained by full-batch gradient
descent with a fixed step."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

LOGREG_DEFAULTS = {"l2": 0.001, "max_iter": 1000, "tol": 1e-8}


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def loss_and_grad(W: np.ndarray, b: np.ndarray, X, Y: np.ndarray, l2: float):
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient in (W, b).

    ``W`` is (classes x features), ``Y`` one-hot (samples x classes).  The
    bias is not penalized.
    """
    n = Y.shape[0]
    Z = np.asarray(X @ W.T) + b
    Z = Z - Z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(Z).sum(axis=1, keepdims=True))
    log_p = Z - log_norm
    loss = -(Y * log_p).sum() / n + 0.5 * l2 * float((W * W).sum())
    D = (np.exp(log_p) - Y) / n
    grad_W = np.asarray(X.T @ D).T + l2 * W
    grad_b = D.sum(axis=0)
    return loss, grad_W, grad_b


def lipschitz_bound(X, l2: float) -> float:
    """Upper bound on the curvature of the objective.

    The softmax Hessian in the logits is bounded by I/2, so the objective's
    curvature is at most ``lambda_max(Xa^T Xa) / (2n) + l2`` with Xa the
    bias-augmented data.  The eigenvalue is computed from a fixed start
    vector and padded by 5% so the step never exceeds 1/L.
    """
    n = X.shape[0]
    Xa = sp.hstack([sp.csr_matrix(X), np.ones((n, 1))]).tocsr() if sp.issparse(X) else np.hstack([X, np.ones((n, 1))])
    gram = (Xa.T @ Xa) / n
    dim = gram.shape[0]
    if dim <= 64:
        top = float(np.linalg.eigvalsh(gram.toarray() if sp.issparse(gram) else gram)[-1])
    else:
        top = float(eigsh(gram, k=1, which="LA", v0=np.ones(dim), tol=1e-10, return_eigenvectors=False)[0])
    return 0.5 * top * 1.05 + l2


def fit_logreg(X, y: np.ndarray, n_classes: int, config: dict, rng=None, history: list | None = None) -> dict:
    l2 = float(config["l2"])
    if l2 < 0:
        raise ValueError("l2 penalty must be nonnegative")
    Y = np.eye(n_classes)[y]
    W = np.zeros((n_classes, X.shape[1]))
    b = np.zeros(n_classes)
    step = 1.0 / lipschitz_bound(X, l2)
    prev = np.inf
    for _ in range(int(config["max_iter"])):
        loss, gW, gb = loss_and_grad(W, b, X, Y, l2)
        if history is not None:
            history.append(loss)
        if prev - loss <= float(config["tol"]) * max(1.0, abs(loss)):
            break
        prev = loss
        W -= step * gW
        b -= step * gb
    return {"W": W, "b": b}


def logreg_scores(params: dict, X) -> np.ndarray:
    return softmax(np.asarray(X @ params["W"].T) + params["b"])
