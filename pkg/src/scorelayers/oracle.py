"""Exact scores and score Jacobians of additive-Gaussian latent models.

For ``Z_i = f_i(Z_pa(i)) + E_i`` with ``E_i ~ N(0, s_i^2)`` the log density is
``sum_i -(z_i - f_i)^2 / (2 s_i^2)`` up to constants.  With residual direction
``v_i = e_i - grad f_i`` (embedded into n coordinates) the score and its
Jacobian are

    score(z)   = -sum_i r_i v_i,                    r_i = (z_i - f_i) / s_i^2
    jacobian(z) = sum_i ( -v_i v_i^T + u_i Hess f_i ) / s_i^2,   u_i = z_i - f_i

both exact and the Jacobian symmetric by construction.  Observed-space
versions follow from the linear-mixing transport rules: for ``X = H Z``,
``score_X = (H^+)^T score_Z`` and ``J_X = (H^+)^T J_Z H^+`` (restricted to the
column span of ``H`` when ``H`` is tall).
"""

from __future__ import annotations

import numpy as np

from .graph import Mechanism, Scm, affine_mechanism, constant_mechanism, zero_mechanism
from .jacobians import (
    ESTIMATED,
    LATENT,
    OBSERVED,
    JacobianBatch,
    center,
    diag_variance,
    pull_back,
)
from .synth import MixingMatrix

__all__ = [
    "score_latent",
    "jacobian_latent",
    "latent_to_observed",
    "score_to_observed",
    "pull_back",
    "center",
    "diag_variance",
    "reparameterize_affine",
    "JacobianBatch",
    "LATENT",
    "OBSERVED",
    "ESTIMATED",
]


def _as_batch(z: np.ndarray, n: int) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        if z.shape != (n,):
            raise ValueError(f"point must have {n} coordinates")
        return z[None, :], True
    if z.ndim != 2 or z.shape[1] != n:
        raise ValueError(f"expected (N, {n}) samples, got {z.shape}")
    return z, False


def score_latent(scm: Scm, z: np.ndarray) -> np.ndarray:
    """Exact score of the joint latent density at ``z`` ((n,) or (N, n))."""
    Z, single = _as_batch(z, scm.n)
    S = np.zeros_like(Z)
    for i in range(scm.n):
        pa = list(scm.dag.parents[i])
        mech = scm.mechanisms[i]
        resid = (Z[:, i] - mech.evaluate(Z[:, pa])) / scm.noise_vars[i]
        S[:, i] -= resid
        if pa:
            S[:, pa] += mech.gradient(Z[:, pa]) * resid[:, None]
    return S[0] if single else S


def jacobian_latent(scm: Scm, z: np.ndarray, as_batch: bool = False):
    """Exact score Jacobian at ``z``; optionally wrapped as a JacobianBatch."""
    Z, single = _as_batch(z, scm.n)
    N, n = Z.shape
    J = np.zeros((N, n, n))
    for i in range(scm.n):
        pa = list(scm.dag.parents[i])
        mech = scm.mechanisms[i]
        inv_var = 1.0 / scm.noise_vars[i]
        J[:, i, i] -= inv_var
        if not pa:
            continue
        Zp = Z[:, pa]
        g = mech.gradient(Zp)                      # (N, p)
        u = Z[:, i] - mech.evaluate(Zp)            # (N,)
        J[:, i, pa] += g * inv_var
        J[:, pa, i] += g * inv_var
        block = inv_var * (
            u[:, None, None] * mech.hessian(Zp)
            - g[:, :, None] * g[:, None, :]
        )
        rows = np.asarray(pa)[:, None]
        cols = np.asarray(pa)[None, :]
        J[:, rows, cols] += block
    if as_batch:
        return JacobianBatch(raw=J, space=LATENT, symmetrize=False)
    return J[0] if single else J


def latent_to_observed(J_Z, mixing: MixingMatrix) -> JacobianBatch:
    """Transport latent Jacobians to the observed space ``X = H Z``.

    Accepts a raw ``(N, n, n)`` stack or a latent-space batch.  Valid on the
    column span of ``H``; for square invertible mixing it is exact everywhere.
    """
    if isinstance(J_Z, JacobianBatch):
        raw = J_Z.raw
        was_centered = J_Z.is_centered
    else:
        raw = np.asarray(J_Z, dtype=float)
        was_centered = False
    if raw.ndim != 3 or raw.shape[1] != mixing.n:
        raise ValueError("latent Jacobians do not match the mixing matrix")
    P = mixing.pinv  # (n, d)
    out = JacobianBatch(
        raw=np.einsum("an,mnk,kb->mab", P.T, raw, P, optimize=True),
        space=OBSERVED,
        symmetrize=True,
    )
    return center(out) if was_centered else out


def score_to_observed(S_Z: np.ndarray, mixing: MixingMatrix) -> np.ndarray:
    """Transport latent scores to the observed space: ``s_X = (H^+)^T s_Z``."""
    S = np.asarray(S_Z, dtype=float)
    single = S.ndim == 1
    S = np.atleast_2d(S)
    if S.shape[1] != mixing.n:
        raise ValueError("latent scores do not match the mixing matrix")
    out = S @ mixing.pinv
    return out[0] if single else out


def reparameterize_affine(scm: Scm, scale, shift) -> Scm:
    """The model of ``Z' = scale * Z + shift`` (componentwise, scale nonzero).

    Mechanisms are wrapped so the transformed variables again follow an
    additive-Gaussian model, with variances ``scale^2 * noise_vars``.  Used to
    keep the oracle exact after min-max scaling.
    """
    a = np.asarray(scale, dtype=float)
    b = np.asarray(shift, dtype=float)
    if a.shape != (scm.n,) or b.shape != (scm.n,):
        raise ValueError("scale and shift must have one entry per node")
    if np.any(np.abs(a) < 1e-12):
        raise ValueError("scale entries must be nonzero")
    mechs: list[Mechanism] = []
    for i in range(scm.n):
        pa = list(scm.dag.parents[i])
        if not pa:
            base = scm.mechanisms[i]
            c = float(base.evaluate(np.zeros(0)))
            mechs.append(_shifted_constant(a[i] * c + b[i]))
            continue
        mechs.append(
            affine_mechanism(
                scm.mechanisms[i],
                out_scale=a[i],
                out_shift=b[i],
                parent_scale=a[pa],
                parent_shift=b[pa],
            )
        )
    return Scm(scm.dag, tuple(mechs), a * a * scm.noise_vars)


def _shifted_constant(value: float) -> Mechanism:
    return zero_mechanism() if value == 0.0 else constant_mechanism(value)
