"""Graph structure, mechanism derivatives, and model validation."""

import numpy as np
import pytest

from scorelayers import (
    Dag,
    GraphError,
    Scm,
    affine_mechanism,
    constant_mechanism,
    directionally_nonlinear,
    induced_scm,
    layers,
    log_cosh,
    make_mechanism,
    make_scm,
    register_mechanism,
    relatives,
    squared_norm,
    topological_order,
    zero_mechanism,
)

LINE4 = Dag.from_edges(4, [(0, 1), (1, 2), (2, 3)])
Y4 = Dag.from_edges(4, [(0, 1), (1, 2), (1, 3)])


def fd_gradient(f, z, h=1e-6):
    z = np.asarray(z, dtype=float)
    g = np.zeros_like(z)
    for k in range(z.size):
        zp, zm = z.copy(), z.copy()
        zp[k] += h
        zm[k] -= h
        g[k] = (f(zp) - f(zm)) / (2 * h)
    return g


def fd_hessian(f, z, h=1e-4):
    z = np.asarray(z, dtype=float)
    p = z.size
    H = np.zeros((p, p))
    for a in range(p):
        for b in range(p):
            if a == b:
                zp, zm = z.copy(), z.copy()
                zp[a] += h
                zm[a] -= h
                H[a, a] = (f(zp) - 2 * f(z) + f(zm)) / (h * h)
            else:
                zpp, zpm, zmp, zmm = (z.copy() for _ in range(4))
                zpp[a] += h
                zpp[b] += h
                zpm[a] += h
                zpm[b] -= h
                zmp[a] -= h
                zmp[b] += h
                zmm[a] -= h
                zmm[b] -= h
                H[a, b] = (f(zpp) - f(zpm) - f(zmp) + f(zmm)) / (4 * h * h)
    return H


def test_dag_rejects_bad_structure():
    with pytest.raises(GraphError):
        Dag.from_edges(2, [(0, 2)])
    with pytest.raises(GraphError):
        Dag.from_edges(2, [(2, 0)])
    with pytest.raises(GraphError):
        Dag.from_edges(2, [(0, 0)])
    with pytest.raises(GraphError):
        Dag.from_edges(3, [(0, 1), (1, 2), (2, 0)])
    with pytest.raises(GraphError):
        Dag(2, ((), (1, 1)))
    with pytest.raises(GraphError):
        Dag(0, ())


def test_dag_edge_round_trip_keeps_parent_order():
    dag = Dag.from_edges(3, [(2, 1), (0, 1)])
    assert dag.parents[1] == (2, 0)
    assert dag.edges() == [(2, 1), (0, 1)]
    again = Dag.from_edges(3, dag.edges())
    assert again.parents == dag.parents


def test_children_leaves_roots():
    assert LINE4.children() == ((1,), (2,), (3,), ())
    assert LINE4.leaves() == [3]
    assert LINE4.roots() == [0]
    assert sorted(Y4.leaves()) == [2, 3]
    assert Y4.roots() == [0]


def test_topological_order_parents_first_and_deterministic():
    rng_seeds = range(8)
    for seed in rng_seeds:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 8))
        edges = []
        order0 = rng.permutation(n)
        for a in range(n):
            for b in range(a + 1, n):
                if rng.random() < 0.4:
                    edges.append((int(order0[a]), int(order0[b])))
        dag = Dag.from_edges(n, edges)
        order = topological_order(dag)
        pos = {v: k for k, v in enumerate(order)}
        for u, v in dag.edges():
            assert pos[u] < pos[v]
        assert topological_order(dag) == order
    # among simultaneously ready nodes the lowest index comes first
    diamond = Dag.from_edges(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
    assert topological_order(diamond) == [0, 1, 2, 3]


def test_layers_longest_path_to_sink():
    lay, top = layers(LINE4)
    assert lay.tolist() == [3, 2, 1, 0]
    assert top == 3
    lay, top = layers(Y4)
    assert lay.tolist() == [2, 1, 0, 0]
    assert top == 2
    # every edge must drop strictly in layer
    for seed in range(6):
        dag_n = 6
        rng = np.random.default_rng(100 + seed)
        edges = [
            (a, b)
            for a in range(dag_n)
            for b in range(a + 1, dag_n)
            if rng.random() < 0.35
        ]
        dag = Dag.from_edges(dag_n, edges)
        lay, top = layers(dag)
        for u, v in dag.edges():
            assert lay[u] > lay[v]
        assert set(np.flatnonzero(lay == 0)) >= set(dag.leaves())


def test_relatives_on_y_graph():
    children, ancestors, descendants = relatives(Y4, 1)
    assert children == {2, 3}
    assert ancestors == {0}
    assert descendants == {2, 3}
    with pytest.raises(GraphError):
        relatives(Y4, 7)


def test_mechanism_derivatives_match_finite_differences():
    """Analytic gradients and Hessians agree with central differences."""
    for arity in (1, 2, 3):
        for mech in (squared_norm(arity), log_cosh(arity)):
            rng = np.random.default_rng(arity)
            for _ in range(5):
                z = rng.uniform(-1.5, 1.5, size=arity)
                g = mech.gradient(z)
                H = mech.hessian(z)
                np.testing.assert_allclose(
                    g, fd_gradient(lambda v: float(mech.evaluate(v)), z), atol=1e-6
                )
                np.testing.assert_allclose(
                    H, fd_hessian(lambda v: float(mech.evaluate(v)), z), atol=1e-4
                )
                np.testing.assert_allclose(H, H.T, atol=1e-12)


def test_mechanism_batched_shapes():
    mech = squared_norm(2)
    Z = np.random.default_rng(0).normal(size=(7, 2))
    assert mech.evaluate(Z).shape == (7,)
    assert mech.gradient(Z).shape == (7, 2)
    assert mech.hessian(Z).shape == (7, 2, 2)
    # batched rows agree with per-point evaluation
    for k in range(7):
        np.testing.assert_allclose(mech.evaluate(Z)[k], mech.evaluate(Z[k]))
        np.testing.assert_allclose(mech.gradient(Z)[k], mech.gradient(Z[k]))
        np.testing.assert_allclose(mech.hessian(Z)[k], mech.hessian(Z[k]))


def test_constant_and_zero_mechanisms():
    z0 = zero_mechanism()
    c = constant_mechanism(2.5)
    assert z0.arity == 0 and c.arity == 0
    assert float(z0.evaluate(np.zeros(0))) == 0.0
    assert float(c.evaluate(np.zeros(0))) == 2.5


def test_affine_mechanism_is_exact_reparameterization():
    """g(s*z + t) must reproduce a*f(z) + b, with chain-rule derivatives."""
    rng = np.random.default_rng(3)
    for base in (squared_norm(2), log_cosh(2)):
        a, b = 1.7, -0.4
        s = np.array([0.8, -1.3])
        t = np.array([0.2, 0.5])
        g = affine_mechanism(base, a, b, s, t)
        for _ in range(5):
            z = rng.uniform(-1.0, 1.0, size=2)
            zp = s * z + t
            np.testing.assert_allclose(
                g.evaluate(zp), a * base.evaluate(z) + b, rtol=1e-12
            )
            np.testing.assert_allclose(
                g.gradient(zp),
                fd_gradient(lambda v: float(g.evaluate(v)), zp),
                atol=1e-6,
            )
            np.testing.assert_allclose(
                g.hessian(zp),
                fd_hessian(lambda v: float(g.evaluate(v)), zp),
                atol=1e-4,
            )
    with pytest.raises(GraphError):
        affine_mechanism(squared_norm(2), 0.0, 0.0)
    with pytest.raises(GraphError):
        affine_mechanism(squared_norm(2), 1.0, 0.0, np.array([1.0, 0.0]), np.zeros(2))


def test_mechanism_registry():
    mech = make_mechanism("squared_norm", 3)
    assert mech.arity == 3
    with pytest.raises(GraphError):
        make_mechanism("no_such_kind", 1)
    register_mechanism("cubic_sum_test", lambda arity, **kw: _cubic(arity))
    got = make_mechanism("cubic_sum_test", 2)
    assert got.kind == "cubic_sum_test"


def _cubic(arity):
    from scorelayers.graph import Mechanism

    def ev(zp):
        zp = np.asarray(zp, dtype=float)
        return np.sum(zp**3, axis=-1)

    def gr(zp):
        zp = np.asarray(zp, dtype=float)
        return 3 * zp**2

    def he(zp):
        zp = np.asarray(zp, dtype=float)
        if zp.ndim == 1:
            return np.diag(6 * zp)
        out = np.zeros(zp.shape[:-1] + (arity, arity))
        idx = np.arange(arity)
        out[..., idx, idx] = 6 * zp
        return out

    return Mechanism("cubic_sum_test", arity, ev, gr, he)


def test_directionally_nonlinear_detects_flat_directions():
    assert directionally_nonlinear(squared_norm(2))
    assert directionally_nonlinear(log_cosh(1))
    assert not directionally_nonlinear(zero_mechanism())

    from scorelayers.graph import Mechanism

    # linear in a direction: f(z) = z0^2 depends only on the first coordinate
    def ev(zp):
        zp = np.asarray(zp, dtype=float)
        return zp[..., 0] ** 2

    def gr(zp):
        zp = np.asarray(zp, dtype=float)
        g = np.zeros_like(zp)
        g[..., 0] = 2 * zp[..., 0]
        return g

    def he(zp):
        zp = np.asarray(zp, dtype=float)
        out = np.zeros(zp.shape[:-1] + (2, 2))
        out[..., 0, 0] = 2.0
        return out

    partial_flat = Mechanism("partial", 2, ev, gr, he)
    assert not directionally_nonlinear(partial_flat)


def test_scm_validation():
    vars4 = np.full(4, 0.5)
    scm = make_scm(LINE4, vars4)
    assert scm.n == 4
    with pytest.raises(GraphError):
        make_scm(LINE4, np.array([0.5, 0.5, 0.0, 0.5]))
    with pytest.raises(GraphError):
        make_scm(LINE4, np.full(3, 0.5))
    # arity mismatch: a leaf mechanism where a 1-parent node needs arity 1
    with pytest.raises(GraphError):
        Scm(LINE4, (zero_mechanism(),) * 4, vars4)
    # flat mechanisms are rejected for nodes with parents
    from scorelayers.graph import Mechanism

    def ev(zp):
        zp = np.asarray(zp, dtype=float)
        return 2.0 * zp[..., 0]

    def gr(zp):
        zp = np.asarray(zp, dtype=float)
        return np.full_like(zp, 2.0)

    def he(zp):
        zp = np.asarray(zp, dtype=float)
        return np.zeros(zp.shape[:-1] + (1, 1))

    linear = Mechanism("linear", 1, ev, gr, he)
    with pytest.raises(GraphError):
        Scm(
            LINE4,
            (zero_mechanism(), linear, squared_norm(1), squared_norm(1)),
            vars4,
        )


def test_induced_scm_marginalizes_sinks():
    scm = make_scm(LINE4, np.array([0.2, 0.3, 0.4, 0.5]))
    sub, kept = induced_scm(scm, [0, 1, 2])
    assert kept.tolist() == [0, 1, 2]
    assert sub.dag.edges() == [(0, 1), (1, 2)]
    np.testing.assert_allclose(sub.noise_vars, scm.noise_vars[:3])
    # kept indices are remapped densely
    sub2, kept2 = induced_scm(scm, [0])
    assert sub2.n == 1 and kept2.tolist() == [0]
    with pytest.raises(GraphError):
        induced_scm(scm, [0, 2])  # node 2 would lose parent 1
    with pytest.raises(GraphError):
        induced_scm(scm, [1, 2, 3])  # node 1 would lose parent 0
