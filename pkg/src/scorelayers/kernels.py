"""RBF kernel helpers shared by the score estimator and the noise regressions."""

from __future__ import annotations

import numpy as np


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows of A and rows of B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return sq


def rbf_gram(A: np.ndarray, B: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gram matrix of ``k(a, b) = exp(-|a - b|^2 / (2 h^2))``."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return np.exp(squared_distances(A, B) / (-2.0 * bandwidth**2))


def median_heuristic(X: np.ndarray) -> float:
    """Median pairwise Euclidean distance between rows of ``X``.

    Raises when there are fewer than two rows or all rows coincide.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("median bandwidth needs at least two samples")
    sq = squared_distances(X, X)
    iu = np.triu_indices(X.shape[0], k=1)
    med = float(np.median(np.sqrt(sq[iu])))
    if med <= 0.0:
        raise ValueError("all samples coincide; bandwidth is degenerate")
    return med
