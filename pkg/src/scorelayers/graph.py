"""Latent causal graphs, structural mechanisms, and the layer decomposition.

A latent model is a DAG over nodes ``0..n-1`` together with one mechanism per
node and one Gaussian noise variance per node.  Node ``i`` is generated as
``Z_i = f_i(Z_pa(i)) + E_i`` with ``E_i ~ N(0, noise_vars[i])``.  The layer of
a node is the length of the longest directed path from it to any sink, so
sinks sit in layer 0 and sources sit at the top.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class GraphError(ValueError):
    """Structural problem: cycles, bad indices, arity or mechanism mismatches."""


# ---------------------------------------------------------------------------
# DAG
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph with an ordered parent tuple per node.

    Parent order is load-bearing: mechanisms receive parent values in exactly
    this order, and serialized edge lists preserve it.
    """

    n: int
    parents: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("need at least one node")
        if len(self.parents) != self.n:
            raise GraphError(
                f"expected {self.n} parent tuples, got {len(self.parents)}"
            )
        object.__setattr__(
            self, "parents", tuple(tuple(int(p) for p in pa) for pa in self.parents)
        )
        for i, pa in enumerate(self.parents):
            for p in pa:
                if not 0 <= p < self.n:
                    raise GraphError(f"parent {p} of node {i} out of range")
                if p == i:
                    raise GraphError(f"node {i} lists itself as a parent")
            if len(set(pa)) != len(pa):
                raise GraphError(f"node {i} repeats a parent")
        topological_order(self)  # raises GraphError on cycles

    @classmethod
    def from_edges(cls, n: int, edges) -> "Dag":
        """Build from an ``(u, v)`` edge list; per-child parent order follows it."""
        pa: list[list[int]] = [[] for _ in range(n)]
        for u, v in edges:
            if not 0 <= v < n:
                raise GraphError(f"edge target {v} out of range")
            pa[v].append(int(u))
        return cls(n, tuple(tuple(p) for p in pa))

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for v in range(self.n) for u in self.parents[v]]

    def children(self) -> tuple[tuple[int, ...], ...]:
        ch: list[list[int]] = [[] for _ in range(self.n)]
        for v in range(self.n):
            for u in self.parents[v]:
                ch[u].append(v)
        return tuple(tuple(c) for c in ch)

    def leaves(self) -> list[int]:
        ch = self.children()
        return [i for i in range(self.n) if not ch[i]]

    def roots(self) -> list[int]:
        return [i for i in range(self.n) if not self.parents[i]]


def topological_order(dag: Dag) -> list[int]:
    """Deterministic topological order (lowest node index first among ready)."""
    indeg = [len(pa) for pa in dag.parents]
    ch = dag.children()
    ready = [i for i in range(dag.n) if indeg[i] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for c in ch[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != dag.n:
        raise GraphError("cycle detected")
    return order


def layers(dag: Dag) -> tuple[np.ndarray, int]:
    """Layer index per node (longest path to a sink) and the top layer index.

    Sinks have layer 0.  A node's layer is one more than the maximum layer of
    its children, so every edge points from a strictly higher layer to a lower
    one.
    """
    ch = dag.children()
    layer = np.zeros(dag.n, dtype=int)
    for i in reversed(topological_order(dag)):
        if ch[i]:
            layer[i] = 1 + max(layer[c] for c in ch[i])
    return layer, int(layer.max())


def relatives(dag: Dag, i: int) -> tuple[set[int], set[int], set[int]]:
    """Children, ancestors, and descendants of node ``i`` by reachability."""
    if not 0 <= i < dag.n:
        raise GraphError(f"node {i} out of range")
    ch = dag.children()
    children = set(ch[i])

    def reach(start: int, nbrs) -> set[int]:
        seen: set[int] = set()
        stack = list(nbrs[start])
        while stack:
            j = stack.pop()
            if j not in seen:
                seen.add(j)
                stack.extend(nbrs[j])
        return seen

    descendants = reach(i, ch)
    ancestors = reach(i, dag.parents)
    return children, ancestors, descendants


# ---------------------------------------------------------------------------
# Mechanisms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mechanism:
    """Structural assignment with analytic first and second derivatives.

    The callables accept a parent-value array shaped ``(arity,)`` or
    ``(N, arity)`` and return, respectively, a scalar / ``(N,)`` value,
    an ``(arity,)`` / ``(N, arity)`` gradient, and an ``(arity, arity)`` /
    ``(N, arity, arity)`` Hessian.
    """

    kind: str
    arity: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)


def zero_mechanism() -> Mechanism:
    """Constant-zero mechanism for source nodes (arity 0)."""

    def ev(zp):
        zp = np.asarray(zp, dtype=float)
        return 0.0 if zp.ndim <= 1 else np.zeros(zp.shape[0])

    def gr(zp):
        zp = np.asarray(zp, dtype=float)
        return np.zeros(0) if zp.ndim <= 1 else np.zeros((zp.shape[0], 0))

    def he(zp):
        zp = np.asarray(zp, dtype=float)
        return np.zeros((0, 0)) if zp.ndim <= 1 else np.zeros((zp.shape[0], 0, 0))

    return Mechanism("zero", 0, ev, gr, he)


def constant_mechanism(value: float) -> Mechanism:
    """Arity-0 mechanism evaluating to a fixed value (a pure mean shift)."""
    v = float(value)

    def ev(zp):
        zp = np.asarray(zp, dtype=float)
        return v if zp.ndim <= 1 else np.full(zp.shape[0], v)

    def gr(zp):
        zp = np.asarray(zp, dtype=float)
        return np.zeros(0) if zp.ndim <= 1 else np.zeros((zp.shape[0], 0))

    def he(zp):
        zp = np.asarray(zp, dtype=float)
        return np.zeros((0, 0)) if zp.ndim <= 1 else np.zeros((zp.shape[0], 0, 0))

    return Mechanism("constant", 0, ev, gr, he, params={"value": v})


def squared_norm(arity: int) -> Mechanism:
    """f(x) = ||x||^2 with gradient 2x and constant Hessian 2I."""
    if arity < 1:
        raise GraphError("squared_norm needs at least one parent")

    def ev(zp):
        zp = np.asarray(zp, dtype=float)
        return np.sum(zp * zp, axis=-1)

    def gr(zp):
        return 2.0 * np.asarray(zp, dtype=float)

    def he(zp):
        zp = np.asarray(zp, dtype=float)
        eye = 2.0 * np.eye(arity)
        if zp.ndim == 1:
            return eye
        return np.broadcast_to(eye, (zp.shape[0], arity, arity)).copy()

    return Mechanism("squared_norm", arity, ev, gr, he)


def log_cosh(arity: int) -> Mechanism:
    """f(x) = sum_i log cosh(x_i); bounded growth, strictly convex everywhere.

    Useful for deep graphs where repeated squaring would blow up value ranges.
    """
    if arity < 1:
        raise GraphError("log_cosh needs at least one parent")

    def ev(zp):
        zp = np.asarray(zp, dtype=float)
        return np.sum(np.logaddexp(zp, -zp) - np.log(2.0), axis=-1)

    def gr(zp):
        return np.tanh(np.asarray(zp, dtype=float))

    def he(zp):
        zp = np.asarray(zp, dtype=float)
        d = 1.0 - np.tanh(zp) ** 2
        if zp.ndim == 1:
            return np.diag(d)
        out = np.zeros((zp.shape[0], arity, arity))
        idx = np.arange(arity)
        out[:, idx, idx] = d
        return out

    return Mechanism("log_cosh", arity, ev, gr, he)


def affine_mechanism(
    base: Mechanism,
    out_scale: float,
    out_shift: float,
    parent_scale: np.ndarray | None = None,
    parent_shift: np.ndarray | None = None,
) -> Mechanism:
    """Reparameterize ``base`` for affinely transformed inputs and output.

    Represents ``g(z') = a * base((z' - t) / s) + b`` where ``z' = s * z + t``
    are the transformed parent values.  With ``parent_scale``/``parent_shift``
    omitted the parents are taken as-is and only the output is mapped.
    """
    a = float(out_scale)
    b = float(out_shift)
    if parent_scale is None:
        s = np.ones(base.arity)
    else:
        s = np.asarray(parent_scale, dtype=float)
    if parent_shift is None:
        t = np.zeros(base.arity)
    else:
        t = np.asarray(parent_shift, dtype=float)
    if s.shape != (base.arity,) or t.shape != (base.arity,):
        raise GraphError("parent transform length must match arity")
    if np.any(np.abs(s) < 1e-12) or abs(a) < 1e-12:
        raise GraphError("affine scales must be nonzero")

    def ev(zp):
        return a * base.evaluate((np.asarray(zp, dtype=float) - t) / s) + b

    def gr(zp):
        return a * base.gradient((np.asarray(zp, dtype=float) - t) / s) / s

    def he(zp):
        h = base.hessian((np.asarray(zp, dtype=float) - t) / s)
        return a * h / np.outer(s, s)

    return Mechanism(
        "affine:" + base.kind,
        base.arity,
        ev,
        gr,
        he,
        params={
            "base": base,
            "out_scale": a,
            "out_shift": b,
            "parent_scale": s,
            "parent_shift": t,
        },
    )


_REGISTRY: dict[str, Callable[..., Mechanism]] = {}


def register_mechanism(kind: str, builder: Callable[..., Mechanism]) -> None:
    """Register a named analytic mechanism builder ``builder(arity, **params)``."""
    _REGISTRY[kind] = builder


register_mechanism("zero", lambda arity=0, **kw: zero_mechanism())
register_mechanism("constant", lambda arity=0, **kw: constant_mechanism(kw.get("value", 0.0)))
register_mechanism("squared_norm", lambda arity, **kw: squared_norm(arity))
register_mechanism("log_cosh", lambda arity, **kw: log_cosh(arity))


def make_mechanism(kind: str, arity: int, **params) -> Mechanism:
    if kind not in _REGISTRY:
        raise GraphError(f"unknown mechanism kind {kind!r}")
    mech = _REGISTRY[kind](arity, **params)
    if mech.arity != arity:
        raise GraphError(
            f"builder for {kind!r} produced arity {mech.arity}, expected {arity}"
        )
    return mech


def directionally_nonlinear(
    mech: Mechanism,
    *,
    probes: int = 100,
    directions: int = 20,
    tol: float = 1e-8,
    seed: int = 0,
    box: float = 2.0,
) -> bool:
    """Statistical check that no probe direction has an everywhere-flat second
    derivative.

    Returns False when some unit direction ``b`` satisfies
    ``|b' H(z) b| < tol`` at every probe point ``z``, which is how a mechanism
    that is linear along a direction of its input would present.  Besides
    random directions the probe set contains the canonical axes, the pairwise
    axis bisectors, and the eigenvectors of the averaged Hessian and of its
    averaged square, which between them expose the flat directions of
    mechanisms that ignore a parent, are bilinear in a pair, or are curved
    only inside a fixed subspace.
    """
    if mech.arity == 0:
        return False
    p = mech.arity
    rng = np.random.default_rng(seed)
    z = rng.uniform(-box, box, size=(probes, p))
    hess = mech.hessian(z)  # (probes, p, p)

    cand = [rng.standard_normal((directions, p)), np.eye(p)]
    for a in range(p):
        for b in range(a + 1, p):
            e = np.zeros((2, p))
            e[0, a] = e[0, b] = 1.0
            e[1, a], e[1, b] = 1.0, -1.0
            cand.append(e)
    mean_h = hess.mean(axis=0)
    mean_sq = np.einsum("nij,njk->ik", hess, hess) / probes
    cand.append(np.linalg.eigh(0.5 * (mean_h + mean_h.T))[1].T)
    cand.append(np.linalg.eigh(0.5 * (mean_sq + mean_sq.T))[1].T)
    dirs = np.vstack(cand)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = np.einsum("di,nij,dj->dn", dirs, hess, dirs)
    flat = np.all(np.abs(vals) < tol, axis=1)
    return not bool(flat.any())


# ---------------------------------------------------------------------------
# SCM
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scm:
    """A DAG plus one mechanism and one noise variance per node."""

    dag: Dag
    mechanisms: tuple[Mechanism, ...]
    noise_vars: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        object.__setattr__(
            self, "noise_vars", np.asarray(self.noise_vars, dtype=float)
        )
        n = self.dag.n
        if len(self.mechanisms) != n:
            raise GraphError("one mechanism per node required")
        if self.noise_vars.shape != (n,):
            raise GraphError("one noise variance per node required")
        if np.any(self.noise_vars <= 0):
            raise GraphError("noise variances must be strictly positive")
        for i, mech in enumerate(self.mechanisms):
            want = len(self.dag.parents[i])
            if mech.arity != want:
                raise GraphError(
                    f"mechanism of node {i} has arity {mech.arity}, "
                    f"but the node has {want} parents"
                )
            if want == 0:
                # arity-0 mechanisms are constants by construction; any value
                # is admissible (a nonzero constant is just a mean shift)
                float(mech.evaluate(np.zeros(0)))
            elif not directionally_nonlinear(mech):
                raise GraphError(
                    f"mechanism of node {i} is flat along some direction; "
                    "second derivatives must not vanish identically"
                )

    @property
    def n(self) -> int:
        return self.dag.n


def make_scm(dag: Dag, noise_vars, kind: str = "squared_norm") -> Scm:
    """Assemble an SCM that uses one registered mechanism kind throughout."""
    mechs = [
        zero_mechanism() if not dag.parents[i] else make_mechanism(kind, len(dag.parents[i]))
        for i in range(dag.n)
    ]
    return Scm(dag, tuple(mechs), noise_vars)


def induced_scm(scm: Scm, keep) -> tuple[Scm, np.ndarray]:
    """Restrict an SCM to ``keep``; valid when dropped nodes are downstream.

    Dropping only sinks (repeatedly) leaves the joint distribution of the kept
    nodes untouched, so the induced model is the exact marginal.  Raises when
    a kept node would lose a parent.
    """
    keep = sorted(int(k) for k in keep)
    keep_set = set(keep)
    pos = {node: idx for idx, node in enumerate(keep)}
    for node in keep:
        for p in scm.dag.parents[node]:
            if p not in keep_set:
                raise GraphError(
                    f"cannot marginalize: kept node {node} has dropped parent {p}"
                )
    parents = tuple(tuple(pos[p] for p in scm.dag.parents[node]) for node in keep)
    dag = Dag(len(keep), parents)
    mechs = tuple(scm.mechanisms[node] for node in keep)
    noise = scm.noise_vars[keep]
    return Scm(dag, mechs, noise), np.asarray(keep, dtype=int)
