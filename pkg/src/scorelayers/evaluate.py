"""Quality metrics for recovered coordinates and estimated Jacobians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .jacobians import JacobianBatch
from .stein import jacobian_ser

__all__ = [
    "correlation_matrix",
    "mac",
    "EvalReport",
    "evaluate_signals",
    "perturb_jacobians",
    "jacobian_ser",
]


def correlation_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Absolute Pearson correlations between rows of A and rows of B.

    Rows are signals of equal length.  A constant row correlates with nothing
    and gets zeros instead of NaNs.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError("signals must have the same length")
    Ac = A - A.mean(axis=1, keepdims=True)
    Bc = B - B.mean(axis=1, keepdims=True)
    na = np.linalg.norm(Ac, axis=1)
    nb = np.linalg.norm(Bc, axis=1)
    na[na < 1e-300] = np.inf
    nb[nb < 1e-300] = np.inf
    return np.abs((Ac / na[:, None]) @ (Bc / nb[:, None]).T)


def mac(estimated: np.ndarray, reference: np.ndarray):
    """Mean absolute correlation under the best one-to-one matching.

    Pairs rows of ``estimated`` with rows of ``reference`` to maximize the
    summed absolute Pearson correlation, then averages the matched values.
    Returns ``(score, pairs)`` with pairs as (estimated_row, reference_row).
    """
    C = correlation_matrix(estimated, reference)
    rows, cols = linear_sum_assignment(-C)
    score = float(C[rows, cols].mean())
    return score, list(zip(rows.tolist(), cols.tolist()))


@dataclass
class EvalReport:
    """Matching quality between recovered and ground-truth signals."""

    mac: float
    pairs: list[tuple[int, int]]
    matched_correlations: list[float]
    layer_agreement: float | None = None

    def to_dict(self) -> dict:
        return {
            "mac": self.mac,
            "pairs": [list(p) for p in self.pairs],
            "matched_correlations": self.matched_correlations,
            "layer_agreement": self.layer_agreement,
        }


def evaluate_signals(
    estimated: np.ndarray,
    reference: np.ndarray,
    estimated_layers=None,
    reference_layers=None,
) -> EvalReport:
    """Score recovered signals against ground truth.

    When both layer labelings are given, ``layer_agreement`` is the fraction
    of matched pairs whose labels coincide.
    """
    C = correlation_matrix(estimated, reference)
    rows, cols = linear_sum_assignment(-C)
    matched = [float(C[i, j]) for i, j in zip(rows, cols)]
    agreement = None
    if estimated_layers is not None and reference_layers is not None:
        est = np.asarray(estimated_layers)
        ref = np.asarray(reference_layers)
        agreement = float(np.mean([est[i] == ref[j] for i, j in zip(rows, cols)]))
    return EvalReport(
        mac=float(np.mean(matched)),
        pairs=list(zip(rows.tolist(), cols.tolist())),
        matched_correlations=matched,
        layer_agreement=agreement,
    )


def perturb_jacobians(
    batch: JacobianBatch, target_ser: float, seed: int = 0
) -> JacobianBatch:
    """Add symmetric Gaussian noise scaled to hit an exact signal-to-error ratio.

    The ratio is the RMS Frobenius amplitude of the batch over the RMS
    Frobenius amplitude of the added noise, so ``jacobian_ser`` on the result
    returns ``target_ser`` by construction and doubling the noise halves it.
    A centered batch is perturbed in its de-meaned form: the constant mean
    matrix carries no sample information, so it neither receives noise nor
    counts as signal.
    """
    if not np.isfinite(target_ser) or target_ser <= 0:
        raise ValueError("target SER must be positive and finite")
    rng = np.random.default_rng(seed)
    base = batch.matrices
    G = rng.standard_normal(base.shape)
    G = 0.5 * (G + np.transpose(G, (0, 2, 1)))
    signal = float(np.sum(base * base))
    noise = float(np.sum(G * G))
    if noise == 0.0:
        raise ValueError("degenerate noise draw")
    if signal == 0.0:
        # a constant batch has no sample variation to corrupt; the noise
        # level consistent with any target ratio is zero
        return JacobianBatch(base.copy(), space=batch.space)
    s = np.sqrt(signal / noise) / target_ser
    return JacobianBatch(base + s * G, space=batch.space)
