"""Layer-by-layer recovery of latent coordinates and their noises.

Latent recovery peels the graph from the sinks upward.  Each round solves for
as many mutually orthogonal null directions as the data admits (these are the
current sinks), completes the candidate basis with random orthonormal
columns, re-expresses the data in that basis, and emits the coordinates whose
pulled-back Jacobian diagonal is constant across samples.  The carried
coordinates form the next round's observations.

The carried data follows the marginal law of the not-yet-emitted latents, so
its score Jacobians are not a sub-block of the previous round's matrices
(children terms of removed sinks drop out of the marginal).  Rounds after the
first therefore obtain Jacobians from a ``refresh`` callback: exact
evaluation on the induced sub-model when ground truth is available, or
re-estimation on the carried data otherwise.  Without a callback the pulled
sub-block is used as-is, which degrades multi-layer graphs but needs no side
information.

With estimated Jacobians (``auto_tol``) each estimation batch is pruned of
its largest outliers and calibrated once on first sight: the feasibility
threshold is the best achievable residual plus 0.001, and it holds for every
pulled-back view of that batch.  Re-estimated (refreshed) Jacobians carry a
fresh noise floor and are calibrated anew.  When a round clears nothing,
peeling stops and the remaining coordinates are returned as a single
unresolved block of random orthonormal directions, because past that point
the data only identifies the upstream variables as a lump.

Noise recovery walks layers downward: the top layer's coordinates are their
own noises, and each lower coordinate is regressed (kernel ridge) on all
higher-layer noise estimates, keeping the residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import GraphError, Scm, induced_scm
from .jacobians import JacobianBatch, center, diag_variance, pull_back
from .kernels import median_heuristic, rbf_gram
from .oracle import jacobian_latent, latent_to_observed
from .solver import SolverConfig, find_null_direction, min_feasibility_level, prune_outliers
from .stein import SteinConfig, stein_jacobian
from .synth import MixingMatrix


class StalledRecoveryError(RuntimeError):
    """A round made no progress; ``partial`` holds what was recovered."""

    def __init__(self, message: str, partial: "RecoveryResult"):
        super().__init__(message)
        self.partial = partial


@dataclass
class RoundRecord:
    index: int
    dim: int
    n_found: int
    residuals: list[float]
    objectives: list[float]
    tol_used: float
    calibrated: float | None
    variances: list[float]
    emitted: list[int]
    jacobian_source: str


@dataclass
class RecoveryResult:
    """Recovered coordinates ordered by emission round.

    Z_hat has one row per recovered coordinate (shape ``(n, N)``);
    ``layer_of[i]`` is the round that emitted row ``i`` (0 = sink layer).
    ``functionals`` holds the fixed linear maps from observations to
    coordinates, so ``Z_hat = functionals @ X.T`` exactly.
    """

    Z_hat: np.ndarray
    layer_of: np.ndarray
    functionals: np.ndarray
    H_history: list[tuple[np.ndarray, int]]
    round_log: list[RoundRecord]
    complete: bool
    status: str


@dataclass
class NoiseResult:
    E_hat: np.ndarray
    layer_of: np.ndarray
    regressions: list[dict] = field(default_factory=list)


@dataclass
class RegressionConfig:
    """Kernel ridge settings for the noise-extraction regressions.

    ``ridge`` multiplies the training count, keeping the effective
    regularizer scale-free in the Gram size.  With ``n_folds >= 2`` the
    residuals are cross-fitted: each point is predicted by a model trained
    on the other folds, so the smoother never sees the noise it is supposed
    to leave behind in the residual.
    """

    ridge: float = 1e-3
    bandwidth: float | str = "median-heuristic"
    bandwidth_scale: float = 1.0
    max_train: int = 1000
    n_folds: int = 2


def recover_latents(
    batch: JacobianBatch,
    X: np.ndarray,
    cfg: SolverConfig | None = None,
    *,
    n_latent: int | None = None,
    var_tol: float = 1e-8,
    refresh=None,
    seed: int = 0,
    strict: bool | None = None,
) -> RecoveryResult:
    """Recover latent coordinates up to layer-respecting linear mixing.

    Parameters
    ----------
    batch : centered observed-space Jacobians of the rows of ``X``.
    X : observations, shape ``(N, d)``.
    cfg : solver settings; ``cfg.auto_tol`` selects the noisy-mode protocol:
        each estimation batch is pruned of outliers and its feasibility
        threshold calibrated (best achievable residual plus 0.001) on first
        sight; pulled-back rounds inherit the threshold, refreshed estimates
        are calibrated anew.
    n_latent : number of latents (defaults to ``d``).
    var_tol : exact-mode emission threshold on each coordinate's diagonal
        variance relative to its own mean-square diagonal level; in auto-tol
        mode a coordinate is emitted iff the solver found it.
    refresh : optional callback ``refresh(X_cur, W_cur, round_index)`` giving
        the centered Jacobian batch of the carried data (may return None to
        fall back to the pulled sub-block for that round).
    strict : raise on stalls (default: strict exactly when not auto-tol).
        When a round makes no progress in non-strict mode, the remaining
        coordinates are returned as one final block of random orthonormal
        directions: everything upstream of the stall is only identifiable as
        a lump, so the block completes the basis without claiming structure.
    """
    cfg = cfg or SolverConfig()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be (N, d)")
    N, d = X.shape
    if batch.n_samples != N or batch.dim != d:
        raise ValueError("Jacobian batch does not match X")
    if not batch.is_centered:
        batch = center(batch)
    n = d if n_latent is None else int(n_latent)
    if not 1 <= n <= d:
        raise ValueError("need 1 <= n_latent <= d")
    if strict is None:
        strict = not cfg.auto_tol

    streams = np.random.SeedSequence(seed).spawn(n + 1)

    # dimension reduction for tall mixing: observations live on an
    # n-dimensional subspace, so re-express them in an orthonormal basis of it
    if d > n:
        _, _, Vt = np.linalg.svd(X, full_matrices=False)
        V = Vt[:n].T                          # (d, n)
        X_cur = X @ V
        batch_cur = pull_back(batch, V)
        W_cur = V.T
    else:
        X_cur = X
        batch_cur = batch
        W_cur = np.eye(d)

    if cfg.auto_tol:
        batch_cur = prune_outliers(batch_cur, cfg.prune_fraction)

    rows: list[np.ndarray] = []
    layer_list: list[int] = []
    func_rows: list[np.ndarray] = []
    history: list[tuple[np.ndarray, int]] = []
    log: list[RoundRecord] = []
    source = "input"
    remaining = n
    tol_global: float | None = None

    def _partial(status: str, complete: bool) -> RecoveryResult:
        Z_hat = (
            np.vstack(rows) if rows else np.zeros((0, N))
        )
        W = np.vstack(func_rows) if func_rows else np.zeros((0, d))
        return RecoveryResult(
            Z_hat=Z_hat,
            layer_of=np.asarray(layer_list, dtype=int),
            functionals=W,
            H_history=history,
            round_log=log,
            complete=complete,
            status=status,
        )

    for round_index in range(n):
        k = remaining
        solving = batch_cur
        round_seed = int(streams[round_index].generate_state(1)[0])
        fill_rng = np.random.default_rng(streams[round_index].spawn(1)[0])

        calibrated = None
        if cfg.auto_tol:
            # each estimation batch is calibrated once, on first sight, and
            # the threshold then holds for every pulled-back view of it:
            # rounds that reuse the same estimates must clear the same bar,
            # so recovery stops where those estimates stop supporting it
            if tol_global is None:
                calibrated = min_feasibility_level(
                    solving, None, cfg, seed=round_seed
                )
                tol_global = calibrated + 1e-3
            tol_used = tol_global
        else:
            tol_used = None  # resolved per call as cfg.tol * batch scale

        found: list[np.ndarray] = []
        residuals: list[float] = []
        objectives: list[float] = []
        while len(found) < k:
            res = find_null_direction(
                solving, found, cfg, seed=round_seed, tol_override=tol_used
            )
            if not res.feasible:
                break
            found.append(res.h)
            residuals.append(res.residual)
            objectives.append(res.objective)
            if len(found) >= solving.dim:
                break

        dim_cur = X_cur.shape[1]
        basis = list(found)
        attempts = 0
        while len(basis) < k:
            cand = fill_rng.standard_normal(dim_cur)
            if basis:
                B = np.column_stack(basis)
                cand = cand - B @ (B.T @ cand)
            nrm = np.linalg.norm(cand)
            attempts += 1
            if nrm > 1e-6:
                basis.append(cand / nrm)
            elif attempts > 100:
                return _handle_stall(
                    "could not complete an orthonormal basis",
                    strict,
                    _partial,
                )
        Hhat = np.column_stack(basis)  # (dim_cur, k), orthonormal

        Z_round = X_cur @ Hhat                     # (N, k)
        pulled = pull_back(solving, Hhat)
        variances = diag_variance(pulled)
        if cfg.auto_tol:
            emitted = list(range(len(found)))
        else:
            # a coordinate counts as constant when its diagonal varies by at
            # most var_tol relative to its own mean-square level; judging each
            # coordinate against its own magnitude keeps a few huge entries
            # elsewhere in the batch from masking genuine variation here.  The
            # floor handles numerically dead diagonals whose remaining energy
            # is roundoff dust from the congruence transform.
            idx = np.arange(pulled.dim)
            diag_ms = np.mean(pulled.raw[:, idx, idx] ** 2, axis=0)
            raw_rms = float(np.sqrt(np.mean(np.sum(solving.raw**2, axis=(1, 2)))))
            floor = (1e-10 * raw_rms) ** 2
            emitted = [
                i
                for i in range(k)
                if variances[i] <= var_tol * max(diag_ms[i], floor)
            ]

        log.append(
            RoundRecord(
                index=round_index,
                dim=dim_cur,
                n_found=len(found),
                residuals=residuals,
                objectives=objectives,
                tol_used=float(tol_used) if tol_used is not None else cfg.tol,
                calibrated=calibrated,
                variances=[float(v) for v in variances],
                emitted=emitted,
                jacobian_source=source,
            )
        )
        history.append((Hhat, len(found)))

        if not emitted:
            msg = f"round {round_index} emitted no coordinate"
            if strict:
                raise StalledRecoveryError(
                    msg, _partial(f"stalled: {msg}", complete=False)
                )
            # everything upstream of the stall is only identifiable as a
            # lump; return the completed basis as one final block rather
            # than pretending the remaining structure was resolved
            for i in range(k):
                rows.append(Z_round[:, i])
                layer_list.append(round_index)
                func_rows.append(Hhat[:, i] @ W_cur)
            return _partial(
                f"stalled: {msg}; {k} remaining coordinates returned as an "
                "unresolved upstream block",
                complete=False,
            )

        carried = [i for i in range(k) if i not in set(emitted)]
        for i in emitted:
            rows.append(Z_round[:, i])
            layer_list.append(round_index)
            func_rows.append(Hhat[:, i] @ W_cur)
        remaining -= len(emitted)
        if remaining == 0:
            return _partial("recovered all coordinates", complete=True)

        X_cur = Z_round[:, carried]
        W_cur = Hhat[:, carried].T @ W_cur
        batch_next = None
        if refresh is not None:
            batch_next = refresh(X_cur, W_cur, round_index + 1)
        if batch_next is None:
            batch_next = pull_back(batch_cur, Hhat[:, carried])
            source = "pullback"
        else:
            source = "refresh"
            if not batch_next.is_centered:
                batch_next = center(batch_next)
            if cfg.auto_tol:
                batch_next = prune_outliers(batch_next, cfg.prune_fraction)
                # fresh estimates carry a fresh noise floor
                tol_global = None
        batch_cur = batch_next

    return _handle_stall("exhausted rounds before recovering all", strict, _partial)


def _handle_stall(msg: str, strict: bool, make_partial) -> RecoveryResult:
    partial = make_partial(f"stalled: {msg}", complete=False)
    if strict:
        raise StalledRecoveryError(msg, partial)
    return partial


# ---------------------------------------------------------------------------
# Jacobian refresh callbacks
# ---------------------------------------------------------------------------


def oracle_refresh(scm: Scm, mixing: MixingMatrix, Z: np.ndarray):
    """Exact Jacobians of the carried data from the known generative model.

    Identifies which true latents the carried coordinates span (the columns
    of the accumulated loading matrix with the largest norms), restricts the
    model to that ancestrally closed set, and transports the exact marginal
    Jacobians through the carried mixing.  Returns None (triggering pull-back
    fallback) when the carried loadings do not single out a marginalizable
    node set.
    """
    Z = np.asarray(Z, dtype=float)

    def refresh(X_cur: np.ndarray, W_cur: np.ndarray, round_index: int):
        k = X_cur.shape[1]
        loadings = W_cur @ mixing.H              # (k, n_true)
        norms = np.linalg.norm(loadings, axis=0)
        keep = np.sort(np.argsort(-norms, kind="stable")[:k])
        try:
            sub, kept = induced_scm(scm, keep)
        except GraphError:
            return None
        try:
            sub_mix = MixingMatrix(loadings[:, kept])
        except ValueError:
            return None
        J = jacobian_latent(sub, Z[:, kept])
        return center(latent_to_observed(J, sub_mix))

    return refresh


def stein_refresh(cfg: SteinConfig | None = None):
    """Re-estimate Jacobians on the carried data each round."""
    cfg = cfg or SteinConfig()

    def refresh(X_cur: np.ndarray, W_cur: np.ndarray, round_index: int):
        return center(stein_jacobian(X_cur, cfg))

    return refresh


# ---------------------------------------------------------------------------
# Noise recovery
# ---------------------------------------------------------------------------


def _krr_fit_predict(F_train, y_train, F_test, reg: RegressionConfig):
    """Linear term by least squares plus a kernel ridge fit of the remainder.

    Splitting off the linear part matters when the target is dominated by a
    linear function of the features (recovered coordinates mix linearly with
    upstream ones): the unbiased linear fit carries that bulk, so kernel
    shrinkage bias only acts on the small nonlinear remainder.
    """
    ones_tr = np.column_stack([np.ones(F_train.shape[0]), F_train])
    beta, *_ = np.linalg.lstsq(ones_tr, y_train, rcond=None)
    resid_tr = y_train - ones_tr @ beta
    lin_te = np.column_stack([np.ones(F_test.shape[0]), F_test]) @ beta

    if isinstance(reg.bandwidth, str):
        bw = median_heuristic(F_train) * reg.bandwidth_scale
    else:
        bw = float(reg.bandwidth)
    if bw <= 0:
        raise ValueError("bandwidth must be positive")
    lam = reg.ridge * F_train.shape[0]
    K = rbf_gram(F_train, F_train, bw)
    alpha = np.linalg.solve(K + lam * np.eye(F_train.shape[0]), resid_tr)
    return lin_te + rbf_gram(F_test, F_train, bw) @ alpha, bw


def _krr_residual(y: np.ndarray, feats: np.ndarray, reg: RegressionConfig, info: dict):
    N = y.shape[0]
    mu_f = feats.mean(axis=0)
    sd_f = feats.std(axis=0)
    sd_f[sd_f < 1e-12] = 1.0
    F = (feats - mu_f) / sd_f
    mu_y = float(y.mean())
    sd_y = float(y.std()) or 1.0
    ys = (y - mu_y) / sd_y

    def _cap(idx):
        if idx.size > reg.max_train:
            idx = idx[:: int(np.ceil(idx.size / reg.max_train))]
        return idx

    bandwidths = []
    if reg.n_folds >= 2:
        fold_id = np.arange(N) % reg.n_folds
        resid = np.empty(N)
        for f in range(reg.n_folds):
            train = _cap(np.where(fold_id != f)[0])
            test = np.where(fold_id == f)[0]
            pred, bw = _krr_fit_predict(F[train], ys[train], F[test], reg)
            resid[test] = ys[test] - pred
            bandwidths.append(bw)
    else:
        train = _cap(np.arange(N))
        pred, bw = _krr_fit_predict(F[train], ys[train], F, reg)
        resid = ys - pred
        bandwidths.append(bw)
    info.update(
        {
            "bandwidths": [float(b) for b in bandwidths],
            "n_folds": int(max(reg.n_folds, 1)),
        }
    )
    return resid * sd_y


def recover_noise(
    result: RecoveryResult, reg: RegressionConfig | None = None
) -> NoiseResult:
    """Extract per-coordinate noise estimates from recovered coordinates.

    The top layer's coordinates are copied verbatim (sources are their own
    noise up to the recovered mixing).  Every lower coordinate is regressed
    on all strictly higher layers' coordinates, and the residual is kept.
    The higher coordinates are exact linear images of the upstream latents,
    so they carry the full conditioning information without the estimation
    error that residual-based features would add, and the coordinate's own
    noise is independent of all of them.
    """
    reg = reg or RegressionConfig()
    Z_hat = np.asarray(result.Z_hat, dtype=float)
    layer_of = np.asarray(result.layer_of, dtype=int)
    if Z_hat.shape[0] == 0:
        raise ValueError("no recovered coordinates")
    top = int(layer_of.max())
    E_hat = np.zeros_like(Z_hat)
    regressions: list[dict] = []
    E_hat[layer_of == top] = Z_hat[layer_of == top]
    for lvl in range(top - 1, -1, -1):
        upstream = np.where(layer_of > lvl)[0]
        feats = Z_hat[upstream].T  # (N, f)
        for coord in np.where(layer_of == lvl)[0]:
            info = {"coordinate": int(coord), "layer": lvl}
            E_hat[coord] = _krr_residual(Z_hat[coord], feats, reg, info)
            regressions.append(info)
    return NoiseResult(E_hat=E_hat, layer_of=layer_of, regressions=regressions)


# ---------------------------------------------------------------------------
# Structure diagnostics
# ---------------------------------------------------------------------------


@dataclass
class UpstreamReport:
    """How recovered coordinates load on the true latents.

    ``loadings[i, j]`` is the weight of true latent ``j`` in recovered
    coordinate ``i`` after scaling each row to unit maximum magnitude.  A
    correct recovery gives layer-``k`` coordinates support only on true
    latents of layer >= k; ``violations[i]`` is the largest forbidden entry.
    """

    loadings: np.ndarray
    beta: np.ndarray | None
    coordinate_layers: np.ndarray
    true_layers: np.ndarray
    violations: np.ndarray
    max_violation: float


def check_upstream_structure(
    result: RecoveryResult, mixing: MixingMatrix, true_layers
) -> UpstreamReport:
    true_layers = np.asarray(true_layers, dtype=int)
    W = np.asarray(result.functionals, dtype=float)
    loadings = W @ mixing.H
    scale = np.max(np.abs(loadings), axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    norm = loadings / scale

    beta = None
    if result.complete and loadings.shape[0] == loadings.shape[1]:
        beta = mixing.pinv @ np.linalg.pinv(W)
        ident = beta @ loadings
        err = np.max(np.abs(ident - np.eye(ident.shape[0])))
        if err > 1e-8:
            raise ValueError(
                f"inconsistent recovered functionals (|beta @ loadings - I| = {err:.2e})"
            )

    violations = np.zeros(loadings.shape[0])
    for i, lvl in enumerate(result.layer_of):
        forbidden = true_layers < lvl
        if forbidden.any():
            violations[i] = float(np.max(np.abs(norm[i, forbidden])))
    return UpstreamReport(
        loadings=norm,
        beta=beta,
        coordinate_layers=np.asarray(result.layer_of, dtype=int),
        true_layers=true_layers,
        violations=violations,
        max_violation=float(violations.max()) if violations.size else 0.0,
    )
