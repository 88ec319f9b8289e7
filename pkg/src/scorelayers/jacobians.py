"""Batches of per-sample score Jacobians (Hessians of the log density)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LATENT = "latent"
OBSERVED = "observed"
ESTIMATED = "estimated-latent"
_SPACES = (LATENT, OBSERVED, ESTIMATED)


@dataclass
class JacobianBatch:
    """A stack of symmetric ``(d, d)`` matrices, one per sample.

    ``raw`` holds the matrices themselves; after :func:`center` the batch also
    carries their mean and the zero-centered stack.  Score Jacobians are
    symmetric in exact arithmetic, so matrices are symmetrized on construction
    (or, with ``symmetrize=False``, merely validated to be symmetric).
    """

    raw: np.ndarray
    space: str
    mean: np.ndarray | None = None
    centered: np.ndarray | None = None
    symmetrize: bool = True

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=float)
        if raw.ndim != 3 or raw.shape[1] != raw.shape[2]:
            raise ValueError("expected a (N, d, d) stack of square matrices")
        if raw.shape[0] < 1:
            raise ValueError("batch must contain at least one matrix")
        if self.space not in _SPACES:
            raise ValueError(f"space must be one of {_SPACES}")
        asym = np.max(np.abs(raw - np.transpose(raw, (0, 2, 1)))) if raw.size else 0.0
        if self.symmetrize:
            raw = 0.5 * (raw + np.transpose(raw, (0, 2, 1)))
        elif asym > 1e-8:
            raise ValueError(f"matrices not symmetric (max asymmetry {asym:.2e})")
        self.raw = raw

    @property
    def n_samples(self) -> int:
        return self.raw.shape[0]

    @property
    def dim(self) -> int:
        return self.raw.shape[1]

    @property
    def is_centered(self) -> bool:
        return self.centered is not None

    @property
    def matrices(self) -> np.ndarray:
        """The stack a consumer should read: de-meaned when centered."""
        return self.centered if self.centered is not None else self.raw


def center(batch: JacobianBatch) -> JacobianBatch:
    """Return a batch with the mean matrix and the de-meaned stack filled in."""
    if batch.n_samples < 2:
        raise ValueError("centering needs at least two matrices")
    mean = batch.raw.mean(axis=0)
    return JacobianBatch(
        raw=batch.raw,
        space=batch.space,
        mean=mean,
        centered=batch.raw - mean,
        symmetrize=False,
    )


def diag_variance(batch: JacobianBatch) -> np.ndarray:
    """Per-coordinate variance of the diagonal entries across the batch."""
    if not batch.is_centered:
        raise ValueError("batch must be centered first")
    c = batch.centered
    idx = np.arange(batch.dim)
    return np.mean(c[:, idx, idx] ** 2, axis=0)


def pull_back(batch: JacobianBatch, columns: np.ndarray) -> JacobianBatch:
    """Congruence transform ``B' = C^T B C`` applied to every matrix.

    Mapping observed-space Jacobians through candidate unmixing columns gives
    the Jacobians of the corresponding estimated latents.  Centering commutes
    with the transform, so a centered input yields a centered output.
    """
    C = np.asarray(columns, dtype=float)
    if C.ndim != 2 or C.shape[0] != batch.dim:
        raise ValueError(
            f"columns must be ({batch.dim}, k), got {C.shape}"
        )
    # summation order makes the congruence symmetric only up to roundoff,
    # so project back onto the symmetric part
    out = JacobianBatch(
        raw=np.einsum("da,mde,eb->mab", C, batch.raw, C, optimize=True),
        space=ESTIMATED,
        symmetrize=True,
    )
    if batch.is_centered:
        return center(out)
    return out
