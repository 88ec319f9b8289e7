"""JacobianBatch container semantics: centering, pull-back, variances."""

import numpy as np
import pytest

from scorelayers import (
    ESTIMATED,
    LATENT,
    OBSERVED,
    JacobianBatch,
    center,
    diag_variance,
    pull_back,
)


def random_batch(n_samples=40, d=4, seed=0, space=OBSERVED):
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n_samples, d, d))
    raw = 0.5 * (raw + np.transpose(raw, (0, 2, 1)))
    return JacobianBatch(raw=raw, space=space)


def test_construction_validates_and_symmetrizes():
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((5, 3, 3))
    batch = JacobianBatch(raw=raw, space=LATENT)
    np.testing.assert_allclose(batch.raw, np.transpose(batch.raw, (0, 2, 1)))
    assert batch.n_samples == 5 and batch.dim == 3
    with pytest.raises(ValueError):
        JacobianBatch(raw=raw, space=LATENT, symmetrize=False)
    with pytest.raises(ValueError):
        JacobianBatch(raw=rng.standard_normal((5, 3, 2)), space=LATENT)
    with pytest.raises(ValueError):
        JacobianBatch(raw=np.zeros((0, 3, 3)), space=LATENT)
    with pytest.raises(ValueError):
        JacobianBatch(raw=raw, space="elsewhere")


def test_center_fills_mean_and_keeps_raw():
    batch = random_batch(seed=1)
    raw_before = batch.raw.copy()
    cb = center(batch)
    assert not batch.is_centered and cb.is_centered
    np.testing.assert_array_equal(cb.raw, raw_before)
    np.testing.assert_allclose(cb.mean, raw_before.mean(axis=0), atol=1e-14)
    np.testing.assert_allclose(cb.centered, raw_before - cb.mean, atol=1e-14)
    np.testing.assert_allclose(cb.centered.mean(axis=0), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        center(JacobianBatch(raw=raw_before[:1], space=OBSERVED))


def test_matrices_property_selects_the_working_stack():
    batch = random_batch(seed=2)
    np.testing.assert_array_equal(batch.matrices, batch.raw)
    cb = center(batch)
    np.testing.assert_array_equal(cb.matrices, cb.centered)


def test_diag_variance_matches_direct_computation():
    batch = center(random_batch(n_samples=200, d=5, seed=3))
    v = diag_variance(batch)
    idx = np.arange(5)
    want = batch.raw[:, idx, idx].var(axis=0)
    np.testing.assert_allclose(v, want, atol=1e-12)
    with pytest.raises(ValueError):
        diag_variance(random_batch(seed=3))


def test_pull_back_is_a_congruence_transform():
    batch = random_batch(n_samples=30, d=4, seed=4)
    rng = np.random.default_rng(5)
    C = rng.standard_normal((4, 2))
    out = pull_back(batch, C)
    assert out.space == ESTIMATED
    assert out.raw.shape == (30, 2, 2)
    for m in range(0, 30, 7):
        np.testing.assert_allclose(out.raw[m], C.T @ batch.raw[m] @ C, atol=1e-12)
    with pytest.raises(ValueError):
        pull_back(batch, rng.standard_normal((3, 2)))


def test_pull_back_commutes_with_centering():
    batch = random_batch(n_samples=60, d=4, seed=6)
    C = np.random.default_rng(7).standard_normal((4, 3))
    a = pull_back(center(batch), C)
    b = center(pull_back(batch, C))
    assert a.is_centered
    np.testing.assert_allclose(a.centered, b.centered, atol=1e-12)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
