"""Ground-truth inference for small models.

Brute force enumerates the joint table by numpy broadcasting; tree
inference runs two-pass elimination in the log domain; grids get
row-frontier elimination.  These are the oracles everything else is
tested against, so they stay independent of the message-passing engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from ._math import logsumexp, softmax

from .models import Edge, PairwiseModel, Potentials, grid_edges
from .trees import Subtree

STATE_SPACE_CAP = 2**20


class StateSpaceCapError(ValueError):
    pass


class UnsupportedStructureError(ValueError):
    pass


@dataclass
class MarginalSet:
    """Node distributions plus joint tables for (a subset of) edges."""

    unary: list[np.ndarray]
    pairwise: dict[Edge, np.ndarray]

    def validate(self, consistent: bool = True, atol: float = 1e-10, pair_atol: float = 1e-8) -> None:
        for i, t in enumerate(self.unary):
            if np.any(t < -atol):
                raise ValueError(f"node {i}: negative marginal entry")
            if abs(t.sum() - 1.0) > atol:
                raise ValueError(f"node {i}: marginal sums to {t.sum()!r}")
        for (i, j), t in self.pairwise.items():
            if np.any(t < -atol):
                raise ValueError(f"edge ({i},{j}): negative entry")
            if abs(t.sum() - 1.0) > atol:
                raise ValueError(f"edge ({i},{j}): table sums to {t.sum()!r}")
            if consistent:
                if np.max(np.abs(t.sum(axis=1) - self.unary[i])) > pair_atol:
                    raise ValueError(f"edge ({i},{j}): row sums disagree with node {i} marginal")
                if np.max(np.abs(t.sum(axis=0) - self.unary[j])) > pair_atol:
                    raise ValueError(f"edge ({i},{j}): column sums disagree with node {j} marginal")

    def matching_residual(self) -> float:
        """Worst edge-to-node marginalization mismatch."""
        worst = 0.0
        for (i, j), t in self.pairwise.items():
            worst = max(worst, float(np.max(np.abs(t.sum(axis=1) - self.unary[i]))))
            worst = max(worst, float(np.max(np.abs(t.sum(axis=0) - self.unary[j]))))
        return worst


def _joint_log_table(model: PairwiseModel, cap: int) -> np.ndarray:
    size = model.state_space_size()
    if size > cap:
        raise StateSpaceCapError(f"state space {size} exceeds cap {cap}")
    n = model.node_count
    table = np.zeros(model.cardinalities)
    for i in range(n):
        shape = [1] * n
        shape[i] = model.cardinalities[i]
        table = table + model.unary_logpot[i].reshape(shape)
    for (i, j) in model.edges:
        shape = [1] * n
        shape[i] = model.cardinalities[i]
        shape[j] = model.cardinalities[j]
        table = table + model.pairwise_logpot[(i, j)].reshape(shape)
    return table


def brute_force_log_partition(model: PairwiseModel, cap: int = STATE_SPACE_CAP) -> float:
    """log sum_x exp(theta(x)) by exhaustive enumeration, max-shifted."""
    return float(logsumexp(_joint_log_table(model, cap)))


def brute_force_marginals(model: PairwiseModel, cap: int = STATE_SPACE_CAP) -> MarginalSet:
    table = _joint_log_table(model, cap)
    p = softmax(table.ravel()).reshape(table.shape)
    n = model.node_count
    unary = []
    for i in range(n):
        axes = tuple(a for a in range(n) if a != i)
        unary.append(p.sum(axis=axes) if axes else np.array(p))
    pairwise = {}
    for (i, j) in model.edges:
        axes = tuple(a for a in range(n) if a not in (i, j))
        t = p.sum(axis=axes) if axes else np.array(p)
        # after summing, remaining axes keep original relative order; i < j holds
        pairwise[(i, j)] = t
    return MarginalSet(unary=unary, pairwise=pairwise)


def _check_tree_support(tree: Subtree, params: Potentials) -> None:
    for e, t in params.pairwise.items():
        if e not in tree.edge_set and np.any(t != 0.0):
            raise ValueError(f"parameters are nonzero on off-tree edge {e}")


def _tree_order(model: PairwiseModel, tree: Subtree):
    """BFS orders per component, rooted at each component's lowest node."""
    n = model.node_count
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in tree.edges:
        adj[i].append(j)
        adj[j].append(i)
    parent = [-1] * n
    seen = [False] * n
    order: list[int] = []
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        queue = [root]
        while queue:
            v = queue.pop(0)
            order.append(v)
            for k in sorted(adj[v]):
                if not seen[k]:
                    seen[k] = True
                    parent[k] = v
                    queue.append(k)
    return order, parent


def _edge_table(params: Potentials, i: int, j: int, cards) -> np.ndarray:
    """Oriented (i, j) view of the stored canonical table, zeros if absent."""
    e = (i, j) if i < j else (j, i)
    t = params.pairwise.get(e)
    if t is None:
        return np.zeros((cards[i], cards[j]))
    return t if i < j else t.T


def tree_log_partition(model: PairwiseModel, tree: Subtree, params: Potentials) -> float:
    """Exact log partition of tree-supported parameters by leaf-to-root passes.

    Forests are handled per component; each component is rooted at its
    lowest-index node.
    """
    _check_tree_support(tree, params)
    cards = model.cardinalities
    order, parent = _tree_order(model, tree)
    up: dict[int, np.ndarray] = {}  # messages child -> parent, indexed by child
    children: list[list[int]] = [[] for _ in range(model.node_count)]
    for v in range(model.node_count):
        if parent[v] != -1:
            children[parent[v]].append(v)
    total = 0.0
    for v in reversed(order):
        score = params.unary[v]
        for c in children[v]:
            score = score + up[c]
        if parent[v] == -1:
            total += float(logsumexp(score))
        else:
            p = parent[v]
            pair = _edge_table(params, v, p, cards)  # (m_v, m_p)
            up[v] = logsumexp(score[:, None] + pair, axis=0)
    return total


def tree_marginals(model: PairwiseModel, tree: Subtree, params: Potentials) -> MarginalSet:
    """Exact unary marginals everywhere and pairwise marginals on tree edges."""
    _check_tree_support(tree, params)
    cards = model.cardinalities
    n = model.node_count
    order, parent = _tree_order(model, tree)
    children: list[list[int]] = [[] for _ in range(n)]
    for v in range(n):
        if parent[v] != -1:
            children[parent[v]].append(v)

    up: dict[int, np.ndarray] = {}
    up_base: dict[int, np.ndarray] = {}  # node score + children messages, pre edge
    for v in reversed(order):
        score = np.array(params.unary[v], dtype=float)
        for c in children[v]:
            score = score + up[c]
        up_base[v] = score
        if parent[v] != -1:
            pair = _edge_table(params, v, parent[v], cards)
            up[v] = logsumexp(score[:, None] + pair, axis=0)

    down: dict[int, np.ndarray] = {}
    for v in order:
        if parent[v] == -1:
            down[v] = np.zeros(cards[v])
        for c in children[v]:
            # everything at v except c's own upward contribution
            ctx = up_base[v] + down[v] - up[c]
            pair = _edge_table(params, v, c, cards)
            down[c] = logsumexp(ctx[:, None] + pair, axis=0)

    unary = []
    for v in range(n):
        belief = up_base[v] + down[v]
        unary.append(softmax(belief))
    pairwise = {}
    for (i, j) in tree.edges:
        # orient child -> parent so contexts exclude the shared edge exactly once
        if parent[j] == i:
            child, par = j, i
        else:
            child, par = i, j
        pair = _edge_table(params, child, par, cards)
        b_child = up_base[child]
        b_par = up_base[par] + down[par] - up[child]
        joint = b_child[:, None] + pair + b_par[None, :]
        t = softmax(joint.ravel()).reshape(joint.shape)
        pairwise[(i, j)] = t if child == i else t.T
    return MarginalSet(unary=unary, pairwise=pairwise)


def entropy_unary(tau: np.ndarray) -> float:
    """Shannon entropy with 0 log 0 = 0."""
    t = np.asarray(tau, dtype=float)
    if t.min() > 0.0:
        return float(-(t * np.log(t)).sum())
    mask = t > 0
    return float(-(t[mask] * np.log(t[mask])).sum())


def mutual_information(tau_ij: np.ndarray, tau_i: np.ndarray, tau_j: np.ndarray) -> float:
    """KL(tau_ij || tau_i tau_j), clamped to 0 when within -1e-12 of zero."""
    t = np.asarray(tau_ij, dtype=float)
    prod = np.outer(tau_i, tau_j)
    if t.min() > 0.0:
        val = float((t * (np.log(t) - np.log(prod))).sum())
    else:
        mask = t > 0
        with np.errstate(divide="ignore"):
            val = float((t[mask] * (np.log(t[mask]) - np.log(prod[mask]))).sum())
    if -1e-12 <= val < 0.0:
        return 0.0
    return val


def tree_entropy(marginals: MarginalSet, tree: Subtree) -> float:
    """Sum of node entropies minus mutual informations over tree edges."""
    h = sum(entropy_unary(t) for t in marginals.unary)
    for e in tree.edges:
        if e not in marginals.pairwise:
            raise ValueError(f"missing pairwise marginal for tree edge {e}")
        i, j = e
        h -= mutual_information(marginals.pairwise[e], marginals.unary[i], marginals.unary[j])
    return float(h)


def _infer_grid_shape(model: PairwiseModel) -> tuple[int, int]:
    n = model.node_count
    want = set(model.edges)
    # 1-column/row chains and all factor pairs are candidates
    for cols in range(1, n + 1):
        if n % cols:
            continue
        rows = n // cols
        if set(grid_edges(rows, cols)) == want:
            return rows, cols
    raise UnsupportedStructureError("model edges do not form a row-major grid")


def _transpose_grid(model: PairwiseModel, rows: int, cols: int) -> PairwiseModel:
    perm = {r * cols + c: c * rows + r for r in range(rows) for c in range(cols)}
    cards = [0] * model.node_count
    for old, new in perm.items():
        cards[new] = model.cardinalities[old]
    unary: list[np.ndarray] = [np.zeros(0)] * model.node_count
    for old, new in perm.items():
        unary[new] = model.unary_logpot[old]
    pairwise = {}
    for (i, j), t in model.pairwise_logpot.items():
        a, b = perm[i], perm[j]
        if a < b:
            pairwise[(a, b)] = t
        else:
            pairwise[(b, a)] = t.T
    return PairwiseModel(
        cardinalities=tuple(cards),
        edges=tuple(sorted(pairwise)),
        unary_logpot=tuple(unary),
        pairwise_logpot=pairwise,
    )


GRID_WIDTH_CAP = 14


def grid_log_partition(model: PairwiseModel) -> float:
    """Exact log partition of a binary rows x cols grid by row elimination.

    Keeps a log table over one row's joint states, absorbing one row at a
    time; memory is 2^(cols+1).  Requires min(rows, cols) <= 14.
    """
    if any(m != 2 for m in model.cardinalities):
        raise UnsupportedStructureError("grid elimination supports binary nodes only")
    rows, cols = _infer_grid_shape(model)
    if min(rows, cols) > GRID_WIDTH_CAP:
        raise UnsupportedStructureError(
            f"grid {rows}x{cols} exceeds width cap {GRID_WIDTH_CAP}")
    if cols > rows:
        model = _transpose_grid(model, rows, cols)
        rows, cols = cols, rows

    def row_factor(r: int) -> np.ndarray:
        """Unaries plus horizontal edges of row r as a (2,)*cols log table."""
        t = np.zeros((2,) * cols)
        for c in range(cols):
            v = r * cols + c
            shape = [1] * cols
            shape[c] = 2
            t = t + model.unary_logpot[v].reshape(shape)
            if c + 1 < cols:
                pair = model.pairwise_logpot[(v, v + 1)]
                shape = [1] * cols
                shape[c] = 2
                shape[c + 1] = 2
                t = t + pair.reshape(shape)
        return t

    table = row_factor(0)
    for r in range(1, rows):
        # absorb vertical edges column by column: sum out the old row's
        # column c (axis 0 after prior steps) while appending the new one
        work = table
        for c in range(cols):
            vert = model.pairwise_logpot[((r - 1) * cols + c, r * cols + c)]
            shape = [1] * work.ndim + [2]
            shape[0] = 2
            work = logsumexp(work[..., None] + vert.reshape(shape), axis=0)
        table = work + row_factor(r)
    return float(logsumexp(table.ravel()))
