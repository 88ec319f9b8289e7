"""Kernelized score and score-Jacobian estimation from raw samples.

The score at the sample points is estimated with the classic kernelized
Stein identity: with RBF Gram matrix ``K`` and ``b_m = sum_m' grad_{x_m'}
k(x_m, x_m')`` the estimate is ``G = -(K + eta I)^{-1} b``.  To obtain
Jacobians, a kernel interpolant ``s(x) = sum_m k(x, x_m) alpha_m`` is fitted
to ``G`` by ridge regression with the same ``eta``, and its analytic
derivative is evaluated at every sample and symmetrized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .jacobians import OBSERVED, JacobianBatch
from .kernels import median_heuristic, rbf_gram

RIDGE_RATE = 1e-3  # default eta is RIDGE_RATE * N, scale free in the Gram size


@dataclass
class SteinConfig:
    """Estimator knobs.

    bandwidth: RBF bandwidth, or "median-heuristic" to use the median pairwise
        distance of the input sample.
    ridge: Tikhonov regularizer eta; None selects ``1e-3 * N``.
    symmetrize: project estimated Jacobians onto their symmetric part
        (downstream containers require symmetry either way).
    """

    bandwidth: float | str = "median-heuristic"
    ridge: float | None = None
    symmetrize: bool = True

    def resolve_bandwidth(self, X: np.ndarray) -> float:
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median-heuristic":
                raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
            return median_heuristic(X)
        bw = float(self.bandwidth)
        if bw <= 0:
            raise ValueError("bandwidth must be positive")
        return bw

    def resolve_ridge(self, n_samples: int) -> float:
        eta = RIDGE_RATE * n_samples if self.ridge is None else float(self.ridge)
        if eta <= 0:
            raise ValueError("ridge must be positive")
        return eta


def median_bandwidth(X: np.ndarray) -> float:
    """Median pairwise distance of the rows of ``X`` (the default bandwidth)."""
    return median_heuristic(X)


def _factorized_system(X: np.ndarray, cfg: SteinConfig):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a (N, d) sample with N >= 2")
    h = cfg.resolve_bandwidth(X)
    eta = cfg.resolve_ridge(X.shape[0])
    K = rbf_gram(X, X, h)
    reg = K + eta * np.eye(X.shape[0])
    return X, h, cho_factor(reg, lower=True), K


def stein_score(X: np.ndarray, cfg: SteinConfig | None = None) -> np.ndarray:
    """Estimated score at every sample point, shape ``(N, d)``."""
    cfg = cfg or SteinConfig()
    X, h, factor, K = _factorized_system(X, cfg)
    b = (X * K.sum(axis=1)[:, None] - K @ X) / h**2
    return -cho_solve(factor, b)


def stein_jacobian(X: np.ndarray, cfg: SteinConfig | None = None) -> JacobianBatch:
    """Estimated score Jacobian at every sample point.

    The fitted score field is differentiated analytically:
    ``J(x) = sum_m grad_x k(x, x_m) alpha_m^T`` with
    ``grad_x k(x, x_m) = -k(x, x_m)(x - x_m)/h^2``.
    """
    cfg = cfg or SteinConfig()
    X, h, factor, K = _factorized_system(X, cfg)
    N, d = X.shape
    b = (X * K.sum(axis=1)[:, None] - K @ X) / h**2
    G = -cho_solve(factor, b)          # estimated scores (N, d)
    alpha = cho_solve(factor, G)       # interpolant weights (N, d)

    KA = K @ alpha                     # (N, d)
    J = np.empty((N, d, d))
    chunk = max(1, min(N, 8_388_608 // max(1, N)))
    for start in range(0, N, chunk):
        stop = min(N, start + chunk)
        Kb = K[start:stop]                               # (c, N)
        t2 = np.einsum("jm,mi,mk->jik", Kb, X, alpha, optimize=True)
        t1 = X[start:stop, :, None] * KA[start:stop, None, :]
        J[start:stop] = (t2 - t1) / h**2
    if cfg.symmetrize:
        J = 0.5 * (J + np.transpose(J, (0, 2, 1)))
    # the container projects regardless; quadratic forms only ever see the
    # symmetric part, so this costs nothing downstream
    return JacobianBatch(raw=J, space=OBSERVED)


def jacobian_ser(estimated: JacobianBatch, oracle: JacobianBatch) -> float:
    """Signal-to-error ratio of a Jacobian estimate against the exact batch.

    RMS Frobenius norm of the exact matrices divided by the RMS Frobenius
    norm of the error, i.e. an amplitude ratio: halving the error doubles
    the SER. Centered batches are compared in their de-meaned form, mirroring
    :func:`scorelayers.evaluate.perturb_jacobians`. Returns ``inf`` for an
    exact match.
    """
    est = estimated.matrices
    ref = oracle.matrices
    if est.shape != ref.shape:
        raise ValueError("batches must have identical shapes")
    signal = float(np.sum(ref**2))
    err = float(np.sum((est - ref) ** 2))
    if err == 0.0:
        return float("inf")
    return float(np.sqrt(signal / err))
