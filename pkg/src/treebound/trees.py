"""Spanning forests, weighted tree ensembles, and weight-domain tests.

Subtrees are spanning forests over all model nodes: an acyclic edge
subset, possibly disconnected, possibly empty.  Ensembles attach one
real weight per subtree; the signed sum of weights over the trees
containing an edge is that edge's appearance value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .models import Edge, PairwiseModel, canonical_edge, model_rng

WEIGHT_EPS = 1e-12  # members lighter than this are treated as absent


class DisconnectedGraphError(ValueError):
    pass


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


@dataclass(frozen=True)
class Subtree:
    """An acyclic edge subset spanning all node_count vertices."""

    node_count: int
    edges: tuple[Edge, ...]

    def __post_init__(self):
        uf = _UnionFind(self.node_count)
        for i, j in self.edges:
            if not (0 <= i < j < self.node_count):
                raise ValueError(f"edge ({i},{j}) out of range or not sorted")
            if not uf.union(i, j):
                raise ValueError(f"edge ({i},{j}) closes a cycle; subtrees must be forests")
        if tuple(sorted(set(self.edges))) != self.edges:
            object.__setattr__(self, "edges", tuple(sorted(set(self.edges))))

    @classmethod
    def of(cls, model: PairwiseModel, edges) -> "Subtree":
        edges = tuple(sorted(canonical_edge(*e) for e in edges))
        model_edges = set(model.edges)
        for e in edges:
            if e not in model_edges:
                raise ValueError(f"edge {e} is not a model edge")
        return cls(node_count=model.node_count, edges=edges)

    @cached_property
    def edge_set(self) -> frozenset[Edge]:
        return frozenset(self.edges)

    def __contains__(self, edge: Edge) -> bool:
        return canonical_edge(*edge) in self.edge_set

    def is_spanning_tree(self) -> bool:
        return len(self.edges) == self.node_count - 1

    def component_labels(self) -> list[int]:
        """Connected-component label per node (root index of its component)."""
        uf = _UnionFind(self.node_count)
        for i, j in self.edges:
            uf.union(i, j)
        return [uf.find(v) for v in range(self.node_count)]


def is_v_acyclic(model: PairwiseModel, tree: Subtree) -> bool:
    """True iff adding any single model edge to the subtree keeps it a forest."""
    labels = tree.component_labels()
    for i, j in model.edges:
        if (i, j) in tree.edge_set:
            continue
        if labels[i] == labels[j]:
            return False
    return True


def max_weight_spanning_tree(model: PairwiseModel, edge_weights: dict[Edge, float]) -> Subtree:
    """Kruskal with union-find; ties broken toward lexicographically smaller edges.

    On a disconnected graph the result is a maximum spanning forest;
    callers that need a spanning tree must check ``is_spanning_tree``.
    """
    missing = [e for e in model.edges if canonical_edge(*e) not in edge_weights]
    if missing:
        raise ValueError(f"edges without weights: {missing[:3]}")
    order = sorted(model.edges, key=lambda e: (-edge_weights[e], e))
    uf = _UnionFind(model.node_count)
    chosen = []
    for i, j in order:
        if uf.union(i, j):
            chosen.append((i, j))
    return Subtree(node_count=model.node_count, edges=tuple(sorted(chosen)))


def random_spanning_tree(model: PairwiseModel, seed: int | None) -> Subtree:
    """Spanning tree from Kruskal over i.i.d. U(0,1) edge weights.

    Weights are drawn for edges in lexicographic order from the seeded
    generator, so the result is deterministic per seed.
    """
    rng = model_rng(seed)
    return _random_spanning_tree(model, rng)


def _random_spanning_tree(model: PairwiseModel, rng: np.random.Generator,
                          covered: set[Edge] | None = None) -> Subtree:
    weights = {}
    for e in model.edges:
        u = rng.uniform(0.0, 1.0)
        weights[e] = 2.0 if covered is not None and e not in covered else u
    tree = max_weight_spanning_tree(model, weights)
    if not tree.is_spanning_tree():
        raise DisconnectedGraphError("model graph is disconnected; no spanning tree exists")
    return tree


def cover_with_spanning_trees(model: PairwiseModel, seed: int | None) -> list[Subtree]:
    """Draw random spanning trees until every model edge is covered.

    After the first draw, still-uncovered edges get weight 2 while covered
    edges get fresh U(0,1) weights, so each draw adds at least one new
    edge and the list has at most |E| members.
    """
    rng = model_rng(seed)
    trees = [_random_spanning_tree(model, rng)]
    covered = set(trees[0].edges)
    all_edges = set(model.edges)
    while covered != all_edges:
        t = _random_spanning_tree(model, rng, covered=covered)
        trees.append(t)
        covered |= t.edge_set
    return trees


@dataclass(frozen=True)
class WeightedEnsemble:
    """Subtrees with real weights summing to one over a fixed edge universe."""

    members: tuple[tuple[Subtree, float], ...]
    universe: tuple[Edge, ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        total = sum(w for _, w in self.members)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total!r}, expected 1")

    @classmethod
    def build(cls, model: PairwiseModel, members) -> "WeightedEnsemble":
        return cls(members=tuple((t, float(w)) for t, w in members), universe=tuple(model.edges))

    @cached_property
    def edge_appearance(self) -> dict[Edge, float]:
        mu = {e: 0.0 for e in self.universe}
        for tree, w in self.members:
            for e in tree.edges:
                mu[e] += w
        return mu

    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.members])


def edge_appearance(ensemble: WeightedEnsemble) -> dict[Edge, float]:
    """Signed sum of member weights per universe edge (0 when absent everywhere)."""
    return dict(ensemble.edge_appearance)


@dataclass(frozen=True)
class WeightDomain:
    """Weight-vector classification: 'positive', 'negative' (with the index
    of the unique heavy member), or 'mixed'."""

    kind: str
    index: int | None = None

    def __str__(self) -> str:
        if self.kind == "negative":
            return f"negative({self.index})"
        return self.kind


def classify_weights(ensemble: WeightedEnsemble) -> WeightDomain:
    """Decide which inequality regime the weights fall in.

    All weights positive: the simplex, Jensen applies (upper bounds).
    Exactly one weight above 1 with every other negative: the reversed
    inequality applies (lower bounds).  Anything else is mixed and
    carries no guarantee.  Near-zero weights count as absent.
    """
    live = [(idx, w) for idx, (_, w) in enumerate(ensemble.members) if abs(w) >= WEIGHT_EPS]
    if not live:
        return WeightDomain("mixed")
    if all(w > 0 for _, w in live):
        return WeightDomain("positive")
    heavy = [idx for idx, w in live if w > 1.0]
    rest_negative = all(w < 0 for idx, w in live if not (w > 1.0))
    if len(heavy) == 1 and rest_negative and len(live) > 1:
        return WeightDomain("negative", heavy[0])
    return WeightDomain("mixed")


@dataclass(frozen=True)
class NegativeEnsembleView:
    """One positive tree at weight beta+1 against negative trees -beta*v_r.

    The v_r live on the simplex, so the induced member weights sum to one
    by construction.  The positive tree may also appear among the
    negative trees.
    """

    positive_tree: Subtree
    beta: float
    negative_trees: tuple[tuple[Subtree, float], ...]
    universe: tuple[Edge, ...]

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        vs = [v for _, v in self.negative_trees]
        if any(v < 0 or v > 1 for v in vs):
            raise ValueError("negative-tree weights v_r must lie in [0, 1]")
        if abs(sum(vs) - 1.0) > 1e-12:
            raise ValueError(f"negative-tree weights sum to {sum(vs)!r}, expected 1")

    @classmethod
    def build(cls, model: PairwiseModel, positive_tree: Subtree, beta: float,
              negative_trees) -> "NegativeEnsembleView":
        return cls(positive_tree=positive_tree, beta=float(beta),
                   negative_trees=tuple((t, float(v)) for t, v in negative_trees),
                   universe=tuple(model.edges))

    def to_ensemble(self) -> WeightedEnsemble:
        members = [(self.positive_tree, self.beta + 1.0)]
        members += [(t, -self.beta * v) for t, v in self.negative_trees if v != 0.0]
        return WeightedEnsemble(members=tuple(members), universe=self.universe)


def dump_ensemble(ensemble: WeightedEnsemble) -> str:
    """Debug listing: one 'weight : edges' line per member, then the mu row."""
    lines = []
    for tree, w in ensemble.members:
        edges = " ".join(f"{i}-{j}" for i, j in tree.edges)
        lines.append(f"{w!r} : {edges}")
    mu = ensemble.edge_appearance
    lines.append("mu: " + " ".join(f"{i}-{j}={mu[(i, j)]!r}" for i, j in ensemble.universe))
    return "\n".join(lines) + "\n"
