"""Shared generators and independent oracles for the test suite.

The enumeration helpers here deliberately use plain Python loops over
itertools.product so they share no code path with the package's
vectorized implementations.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from treebound import PairwiseModel


def build_model(cards, edges, unary, pairwise) -> PairwiseModel:
    return PairwiseModel(
        cardinalities=tuple(cards),
        edges=tuple(sorted(tuple(e) for e in edges)),
        unary_logpot=tuple(np.asarray(u, dtype=float) for u in unary),
        pairwise_logpot={tuple(e): np.asarray(t, dtype=float) for e, t in pairwise.items()},
    )


def random_model(rng, n_nodes, edges, max_card=3, scale=1.0) -> PairwiseModel:
    cards = [int(rng.integers(2, max_card + 1)) for _ in range(n_nodes)]
    unary = [scale * rng.standard_normal(m) for m in cards]
    pairwise = {}
    for (i, j) in sorted(edges):
        pairwise[(i, j)] = scale * rng.standard_normal((cards[i], cards[j]))
    return build_model(cards, sorted(edges), unary, pairwise)


def random_tree_edges(rng, n_nodes) -> list[tuple[int, int]]:
    """Uniform-ish random labeled tree: attach each node to a prior one."""
    edges = []
    for v in range(1, n_nodes):
        u = int(rng.integers(0, v))
        edges.append((min(u, v), max(u, v)))
    return sorted(edges)


def random_ising_tree(rng, n_nodes, c, attractive=False) -> PairwiseModel:
    """Tree-structured Ising-style model with +-1 encoding."""
    edges = random_tree_edges(rng, n_nodes)
    unary = []
    for _ in range(n_nodes):
        h = rng.uniform(-0.05, 0.05)
        unary.append(np.array([-h, h]))
    pairwise = {}
    for e in edges:
        t = rng.uniform(0.0, c) if attractive else rng.uniform(-c, c)
        pairwise[e] = np.array([[t, -t], [-t, t]])
    return build_model([2] * n_nodes, edges, unary, pairwise)


def random_ising_triangle(rng, c, attractive=False) -> PairwiseModel:
    edges = [(0, 1), (0, 2), (1, 2)]
    unary = []
    for _ in range(3):
        h = rng.uniform(-0.05, 0.05)
        unary.append(np.array([-h, h]))
    pairwise = {}
    for e in edges:
        t = rng.uniform(0.0, c) if attractive else rng.uniform(-c, c)
        pairwise[e] = np.array([[t, -t], [-t, t]])
    return build_model([2, 2, 2], edges, unary, pairwise)


def enum_configurations(model: PairwiseModel):
    return itertools.product(*(range(m) for m in model.cardinalities))


def enum_score(model: PairwiseModel, x) -> float:
    s = 0.0
    for i in range(model.node_count):
        s += float(model.unary_logpot[i][x[i]])
    for (i, j) in model.edges:
        s += float(model.pairwise_logpot[(i, j)][x[i], x[j]])
    return s


def enum_log_partition(model: PairwiseModel) -> float:
    """Plain-Python enumeration oracle for the log partition function."""
    scores = [enum_score(model, x) for x in enum_configurations(model)]
    m = max(scores)
    return m + math.log(sum(math.exp(s - m) for s in scores))


def enum_marginals(model: PairwiseModel):
    """Plain-Python enumeration oracle for node and edge marginals."""
    logz = enum_log_partition(model)
    unary = [np.zeros(m) for m in model.cardinalities]
    pairwise = {e: np.zeros((model.cardinalities[e[0]], model.cardinalities[e[1]]))
                for e in model.edges}
    for x in enum_configurations(model):
        p = math.exp(enum_score(model, x) - logz)
        for i in range(model.node_count):
            unary[i][x[i]] += p
        for (i, j) in model.edges:
            pairwise[(i, j)][x[i], x[j]] += p
    return unary, pairwise


def enum_entropy(model: PairwiseModel) -> float:
    logz = enum_log_partition(model)
    h = 0.0
    for x in enum_configurations(model):
        logp = enum_score(model, x) - logz
        h -= math.exp(logp) * logp
    return h


def all_spanning_trees(n_nodes, edges):
    """Every acyclic edge subset of size n-1 connecting all nodes (brute force)."""
    trees = []
    for subset in itertools.combinations(sorted(edges), n_nodes - 1):
        parent = list(range(n_nodes))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        ok = True
        for (i, j) in subset:
            ri, rj = find(i), find(j)
            if ri == rj:
                ok = False
                break
            parent[rj] = ri
        if ok and len({find(v) for v in range(n_nodes)}) == 1:
            trees.append(tuple(subset))
    return trees
