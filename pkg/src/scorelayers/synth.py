"""Synthetic data generation: noises, latents, scaling, and linear mixing."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graph import (
    Dag,
    GraphError,
    Scm,
    affine_mechanism,
    constant_mechanism,
    topological_order,
)


@dataclass(frozen=True)
class ScaleInfo:
    """Per-column affine map ``z' = scale * z + shift`` sending [lo, hi] to [0, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @property
    def scale(self) -> np.ndarray:
        return 1.0 / (self.hi - self.lo)

    @property
    def shift(self) -> np.ndarray:
        return -self.lo / (self.hi - self.lo)


class MixingMatrix:
    """Full-column-rank mixing ``X = H Z`` with a cached Moore-Penrose inverse."""

    _MIN_SV_RATIO = 1e-9

    def __init__(self, H: np.ndarray):
        H = np.asarray(H, dtype=float)
        if H.ndim != 2:
            raise ValueError("mixing matrix must be 2-D")
        d, n = H.shape
        if d < n:
            raise ValueError("mixing must not reduce dimension (need d >= n)")
        sv = np.linalg.svd(H, compute_uv=False)
        if sv[0] == 0 or sv[-1] / sv[0] <= self._MIN_SV_RATIO:
            raise ValueError("mixing matrix is rank deficient")
        self.H = H
        self.pinv = np.linalg.pinv(H)
        err = np.max(np.abs(self.pinv @ H - np.eye(n)))
        if err > 1e-8:
            raise ValueError(f"pseudo-inverse check failed (|pinv H - I| = {err:.2e})")

    @classmethod
    def identity(cls, n: int) -> "MixingMatrix":
        return cls(np.eye(n))

    @property
    def d(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]


@dataclass
class SampleBatch:
    """Row-major sample arrays: noises E, latents Z, observations X (optional)."""

    E: np.ndarray
    Z: np.ndarray
    X: np.ndarray | None = None
    scale_info: ScaleInfo | None = None


def sample_noise_variances(n: int, seed: int) -> np.ndarray:
    """Independent variances drawn uniformly from [0.1, 1)."""
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 1.0, size=n)


def sample_scm(scm: Scm, n_samples: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw (E, Z) from the model.

    Noise column ``i`` comes from the ``i``-th spawned child of
    ``SeedSequence(seed)``, so adding nodes never perturbs the draws of
    existing columns.  Latents are filled in topological order.
    """
    n = scm.n
    streams = np.random.SeedSequence(seed).spawn(n)
    E = np.empty((n_samples, n))
    for i in range(n):
        rng = np.random.default_rng(streams[i])
        E[:, i] = rng.normal(0.0, np.sqrt(scm.noise_vars[i]), size=n_samples)
    Z = np.empty_like(E)
    for i in topological_order(scm.dag):
        pa = list(scm.dag.parents[i])
        Z[:, i] = scm.mechanisms[i].evaluate(Z[:, pa]) + E[:, i]
    return E, Z


def min_max_scale(batch: SampleBatch) -> SampleBatch:
    """Map every Z column affinely onto [0, 1]; noises are left untouched.

    Any observation matrix on the batch is dropped because it would no longer
    correspond to the scaled latents.
    """
    Z = batch.Z
    lo = Z.min(axis=0)
    hi = Z.max(axis=0)
    if np.any(hi - lo < 1e-12):
        raise ValueError("cannot scale a constant column")
    info = ScaleInfo(lo=lo, hi=hi)
    Zs = (Z - lo) / (hi - lo)
    return SampleBatch(E=batch.E, Z=Zs, X=None, scale_info=info)


def sample_scaled(
    scm: Scm, n_samples: int, seed: int
) -> tuple[np.ndarray, np.ndarray, Scm, ScaleInfo]:
    """Sample with per-node min-max scaling applied as each node is generated.

    Each node's raw value ``f_i(Z'_pa) + E_i`` (parents already scaled) is
    mapped onto [0, 1] before its children consume it.  The returned model has
    output-affine mechanisms and variances ``a_i^2 sigma_i^2``, and it is the
    exact additive-Gaussian law of the scaled samples when the per-dataset
    extrema are treated as constants.  Returns (E, Z_scaled, scaled_scm, info).
    """
    n = scm.n
    streams = np.random.SeedSequence(seed).spawn(n)
    E = np.empty((n_samples, n))
    for i in range(n):
        rng = np.random.default_rng(streams[i])
        E[:, i] = rng.normal(0.0, np.sqrt(scm.noise_vars[i]), size=n_samples)

    Z = np.empty_like(E)
    lo = np.empty(n)
    hi = np.empty(n)
    mechs: list = [None] * n
    new_vars = np.empty(n)
    for i in topological_order(scm.dag):
        pa = list(scm.dag.parents[i])
        raw = scm.mechanisms[i].evaluate(Z[:, pa]) + E[:, i]
        lo[i], hi[i] = raw.min(), raw.max()
        if hi[i] - lo[i] < 1e-12:
            raise ValueError(f"node {i} produced a constant column")
        a = 1.0 / (hi[i] - lo[i])
        b = -lo[i] * a
        Z[:, i] = a * raw + b
        if pa:
            mechs[i] = affine_mechanism(scm.mechanisms[i], a, b)
        else:
            # a source's raw value is pure noise, so z' = a e + b is
            # N(b, a^2 sigma^2); the shift becomes a constant mechanism
            mechs[i] = constant_mechanism(b)
        new_vars[i] = a * a * scm.noise_vars[i]
    scaled = Scm(scm.dag, tuple(mechs), new_vars)
    return E, Z, scaled, ScaleInfo(lo=lo, hi=hi)


def sample_mixing(d: int, n: int, seed: int, max_attempts: int = 100) -> MixingMatrix:
    """Gaussian mixing matrix, resampled until well conditioned."""
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        H = rng.standard_normal((d, n))
        try:
            return MixingMatrix(H)
        except ValueError:
            continue
    raise RuntimeError(f"no full-rank mixing found in {max_attempts} draws")


def mix(batch: SampleBatch, mixing: MixingMatrix) -> SampleBatch:
    """Attach observations ``X = Z H^T`` to a batch."""
    if batch.Z.shape[1] != mixing.n:
        raise ValueError(
            f"mixing expects {mixing.n} latents, batch has {batch.Z.shape[1]}"
        )
    X = batch.Z @ mixing.H.T
    return replace(batch, X=X)


def sample_dag(n: int, edge_prob: float, seed: int) -> Dag:
    """Random DAG: a random node order with independent forward edges."""
    if not 0.0 <= edge_prob <= 1.0:
        raise GraphError("edge probability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    edges = []
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < edge_prob:
                edges.append((int(order[a]), int(order[b])))
    return Dag.from_edges(n, edges)
