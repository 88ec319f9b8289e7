"""Sampling, scaling, and mixing-matrix construction."""

import numpy as np
import pytest

from scorelayers import (
    Dag,
    GraphError,
    MixingMatrix,
    SampleBatch,
    make_scm,
    min_max_scale,
    mix,
    sample_dag,
    sample_mixing,
    sample_noise_variances,
    sample_scaled,
    sample_scm,
    topological_order,
)

LINE4 = Dag.from_edges(4, [(0, 1), (1, 2), (2, 3)])


def test_noise_variances_range_and_determinism():
    for seed in range(10):
        v = sample_noise_variances(6, seed)
        assert v.shape == (6,)
        assert np.all(v >= 0.1) and np.all(v < 1.0)
        np.testing.assert_array_equal(v, sample_noise_variances(6, seed))
    assert not np.array_equal(
        sample_noise_variances(6, 0), sample_noise_variances(6, 1)
    )


def test_sample_scm_law_and_seed_stability():
    scm = make_scm(LINE4, np.array([0.3, 0.5, 0.2, 0.9]))
    E, Z = sample_scm(scm, 4000, seed=7)
    assert E.shape == Z.shape == (4000, 4)
    # structural equations hold exactly sample by sample
    for i in topological_order(scm.dag):
        pa = list(scm.dag.parents[i])
        np.testing.assert_allclose(
            Z[:, i], scm.mechanisms[i].evaluate(Z[:, pa]) + E[:, i], atol=1e-12
        )
    # empirical noise variances track the configured ones
    np.testing.assert_allclose(E.var(axis=0), scm.noise_vars, rtol=0.15)
    E2, Z2 = sample_scm(scm, 4000, seed=7)
    np.testing.assert_array_equal(E, E2)
    np.testing.assert_array_equal(Z, Z2)


def test_sample_scm_noise_streams_are_per_node():
    """Noise column i depends only on (seed, i), not on the rest of the model."""
    scm_a = make_scm(LINE4, np.full(4, 0.25))
    scm_b = make_scm(Dag.from_edges(4, [(0, 1), (1, 2), (1, 3)]), np.full(4, 0.25))
    E_a, _ = sample_scm(scm_a, 200, seed=3)
    E_b, _ = sample_scm(scm_b, 200, seed=3)
    np.testing.assert_array_equal(E_a, E_b)


def test_min_max_scale_maps_to_unit_interval():
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(300, 3)) * np.array([1.0, 5.0, 0.2])
    batch = min_max_scale(SampleBatch(E=np.zeros_like(Z), Z=Z, X=None))
    assert batch.Z.min(axis=0).tolist() == [0.0, 0.0, 0.0]
    assert batch.Z.max(axis=0).tolist() == [1.0, 1.0, 1.0]
    info = batch.scale_info
    np.testing.assert_allclose(Z * info.scale + info.shift, batch.Z, atol=1e-12)
    with pytest.raises(ValueError):
        min_max_scale(SampleBatch(E=np.zeros_like(Z), Z=np.ones_like(Z), X=None))


def test_sample_scaled_is_consistent_with_its_own_model():
    """The returned model must be the exact law of the scaled samples.

    Re-propagating the scaled mechanisms with the scaled noises has to
    reproduce the returned latents bit for bit (up to roundoff), and every
    coordinate has to span [0, 1].
    """
    for seed in range(5):
        scm = make_scm(LINE4, sample_noise_variances(4, seed))
        E, Z, scaled, info = sample_scaled(scm, 1500, seed)
        assert Z.min(axis=0).max() < 1e-12
        np.testing.assert_allclose(Z.max(axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(
            scaled.noise_vars, info.scale**2 * scm.noise_vars, rtol=1e-12
        )
        Z_re = np.empty_like(Z)
        for i in topological_order(scm.dag):
            pa = list(scm.dag.parents[i])
            Z_re[:, i] = scaled.mechanisms[i].evaluate(Z_re[:, pa])
            Z_re[:, i] += info.scale[i] * E[:, i]
        np.testing.assert_allclose(Z_re, Z, atol=1e-10)


def test_mixing_matrix_validation():
    rng = np.random.default_rng(1)
    H = rng.standard_normal((5, 3))
    m = MixingMatrix(H)
    assert (m.d, m.n) == (5, 3)
    np.testing.assert_allclose(m.pinv @ m.H, np.eye(3), atol=1e-10)
    with pytest.raises(ValueError):
        MixingMatrix(rng.standard_normal((2, 4)))  # wide
    rank_deficient = np.outer(rng.standard_normal(4), rng.standard_normal(3))
    with pytest.raises(ValueError):
        MixingMatrix(rank_deficient)
    eye = MixingMatrix.identity(4)
    np.testing.assert_array_equal(eye.H, np.eye(4))


def test_sample_mixing_deterministic_and_well_conditioned():
    for seed in range(8):
        m = sample_mixing(6, 4, seed)
        assert (m.d, m.n) == (6, 4)
        sv = np.linalg.svd(m.H, compute_uv=False)
        assert sv[-1] / sv[0] > 1e-9
        np.testing.assert_array_equal(m.H, sample_mixing(6, 4, seed).H)


def test_mix_attaches_observations():
    scm = make_scm(LINE4, np.full(4, 0.5))
    E, Z = sample_scm(scm, 100, seed=0)
    m = sample_mixing(5, 4, seed=0)
    batch = mix(SampleBatch(E=E, Z=Z, X=None), m)
    np.testing.assert_allclose(batch.X, Z @ m.H.T, atol=1e-12)
    with pytest.raises(ValueError):
        mix(SampleBatch(E=E[:, :3], Z=Z[:, :3], X=None), m)


def test_sample_dag_edge_probability_extremes():
    for seed in range(5):
        assert sample_dag(5, 0.0, seed).edges() == []
        full = sample_dag(5, 1.0, seed)
        assert len(full.edges()) == 10  # every forward pair in the hidden order
        mid = sample_dag(6, 0.4, seed)
        assert mid.n == 6
        assert mid.edges() == sample_dag(6, 0.4, seed).edges()
    with pytest.raises(GraphError):
        sample_dag(4, 1.5, 0)
