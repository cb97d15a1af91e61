"""Tree-decomposition bounds: evaluation, reconstruction, certification.

The bound value is a weighted sum of exact per-tree log partition
functions.  Positive weights on the simplex give an upper bound on the
model's log partition function by convexity; one weight above 1 with all
others negative flips the inequality.  Both statements hold for any
decomposition whose parameter tables sum back to the model's, so a bound
is certified by exhibiting such a decomposition and measuring how far
its sum is from the model, rather than by trusting the fixed point that
produced it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exact import MarginalSet, tree_entropy, tree_log_partition, tree_marginals
from .models import Edge, PairwiseModel, Potentials
from .propagation import BeliefState
from .trees import (
    WEIGHT_EPS,
    Subtree,
    WeightDomain,
    WeightedEnsemble,
    classify_weights,
)

RESIDUAL_CERTIFY_MAX = 1e-6
ZERO_MARGINAL_FLOOR = 1e-300


class ZeroMarginalError(ValueError):
    pass


@dataclass(frozen=True)
class TreeMember:
    tree: Subtree
    weight: float
    params: Potentials


@dataclass(frozen=True)
class TreeDecomposition:
    """Weighted tree-supported parameter vectors plus their defect.

    ``residual`` is the gauge-fixed normal form of (model minus the
    member sum): per-edge row/column means are credited to the endpoint
    nodes and per-node means removed, which is the unique reduction under
    the additive freedom of pairwise parameterizations.  Its tables
    vanish exactly when the member sum equals the model up to a constant
    function of the configuration, so a small ``residual_max`` makes the
    Jensen / reversed-Jensen guarantee checkable; the removed constant is
    folded back into the members by the reconstruction, keeping the bound
    value honest.
    """

    members: tuple[TreeMember, ...]
    residual: Potentials
    residual_max: float


def _member_sum(model: PairwiseModel, members) -> Potentials:
    total = Potentials.zeros_for(model, model.edges)
    for m in members:
        total.add_into(m.params)
    return total


def build_decomposition(model: PairwiseModel, members) -> TreeDecomposition:
    """Wrap explicit members, computing their residual against the model."""
    members = tuple(members)
    total = _member_sum(model, members)
    diff = Potentials.of_model(model)
    diff.add_into(total.scaled(-1.0))
    covered = set()
    for m in members:
        covered |= m.tree.edge_set
    residual, res_max, _ = _gauge_fixed_residual(model, diff, covered)
    return TreeDecomposition(members=members, residual=residual, residual_max=res_max)


def _gauge_fixed_residual(model: PairwiseModel, diff: Potentials, covered: set[Edge]):
    """Normal form of a table mismatch under the additive gauge freedom.

    A tuple of node and edge tables represents the zero function exactly
    when, after doubly centering each edge table and crediting the removed
    row/column means to the endpoint nodes, the node accounts are
    constant.  Returns (residual, max-norm, node_constants): the centered
    tables, their max entry, and the per-node constants that remain (the
    gauge-invariant constant part of the mismatch, summing over nodes).
    Edges covered by no member keep their full mismatch.
    """
    node_acc = [np.array(t) for t in diff.unary]
    res_pair: dict[Edge, np.ndarray] = {}
    for (i, j) in model.edges:
        d = diff.pairwise[(i, j)]
        if (i, j) not in covered:
            res_pair[(i, j)] = np.array(d)
            continue
        a = d.mean(axis=1)
        b = d.mean(axis=0)
        m = d.mean()
        res_pair[(i, j)] = d - a[:, None] - b[None, :] + m
        node_acc[i] = node_acc[i] + (a - m / 2.0)
        node_acc[j] = node_acc[j] + (b - m / 2.0)
    res_unary = []
    node_constants = []
    for i in range(model.node_count):
        c = float(node_acc[i].mean())
        res_unary.append(node_acc[i] - c)
        node_constants.append(c)
    residual = Potentials(unary=res_unary, pairwise=res_pair)
    return residual, residual.max_abs(), node_constants


def evaluate_psi(model: PairwiseModel, decomposition: TreeDecomposition) -> float:
    """sum_r w_r * (exact log partition of member r scaled by 1/w_r)."""
    value = 0.0
    for m in decomposition.members:
        if m.weight == 0.0:
            raise ValueError("member weight must be nonzero")
        value += m.weight * tree_log_partition(model, m.tree, m.params.scaled(1.0 / m.weight))
    return value


def reconstruct_decomposition(
    model: PairwiseModel, ensemble: WeightedEnsemble, marginals: MarginalSet
) -> TreeDecomposition:
    """Decomposition whose member distributions have the given marginals.

    Each member's scaled parameters are the canonical tree form of the
    shared beliefs: log tau_i on nodes, log(tau_ij / tau_i tau_j) on its
    edges.  Whatever that sum misses of the model, its gauge part (per-
    edge row/column means, per-node constants) is folded back into the
    member tables; the rest is reported as the residual.  Members with
    negligible weight are dropped.
    """
    members_in = [(t, w) for t, w in ensemble.members if abs(w) >= WEIGHT_EPS]
    if not members_in:
        raise ValueError("ensemble has no members of usable weight")
    log_unary = []
    for i in range(model.node_count):
        t = marginals.unary[i]
        if np.any(t < ZERO_MARGINAL_FLOOR):
            s = int(np.argmin(t))
            raise ZeroMarginalError(f"node {i}, state {s}: marginal {t[s]!r} too close to zero")
        log_unary.append(np.log(t))
    log_ratio: dict[Edge, np.ndarray] = {}
    needed = set()
    for t, _ in members_in:
        needed |= t.edge_set
    for (i, j) in sorted(needed):
        if (i, j) not in marginals.pairwise:
            raise ValueError(f"marginals missing for ensemble edge ({i},{j})")
        tab = marginals.pairwise[(i, j)]
        if np.any(tab < ZERO_MARGINAL_FLOOR):
            s, t_ = np.unravel_index(int(np.argmin(tab)), tab.shape)
            raise ZeroMarginalError(
                f"edge ({i},{j}), states ({s},{t_}): marginal {tab[s, t_]!r} too close to zero")
        log_ratio[(i, j)] = np.log(tab) - log_unary[i][:, None] - log_unary[j][None, :]

    members = []
    for tree, w in members_in:
        params = Potentials(
            unary=[w * lu for lu in log_unary],
            pairwise={e: w * log_ratio[e] for e in tree.edges},
        )
        members.append(TreeMember(tree=tree, weight=w, params=params))

    total = _member_sum(model, members)
    diff = Potentials.of_model(model)
    diff.add_into(total.scaled(-1.0))
    covered = set(needed)
    residual, res_max, node_constants = _gauge_fixed_residual(model, diff, covered)

    # fold the constant part of the mismatch into the first member; being
    # constant per table, it shifts that member's log partition without
    # disturbing its distribution, so the members stay marginal-matched
    patched = [TreeMember(m.tree, m.weight, m.params.copy()) for m in members]
    for i in range(model.node_count):
        patched[0].params.unary[i] = patched[0].params.unary[i] + node_constants[i]
    return TreeDecomposition(members=tuple(patched), residual=residual, residual_max=res_max)


def psi_weight_gradient(model: PairwiseModel, decomposition: TreeDecomposition) -> list[float]:
    """Entropy of each member's scaled tree distribution.

    These are the partial derivatives of the bound value with respect to
    the member weights at fixed parameter tables.
    """
    grads = []
    for m in decomposition.members:
        if m.weight == 0.0:
            raise ValueError("member weight must be nonzero")
        scaled = m.params.scaled(1.0 / m.weight)
        marg = tree_marginals(model, m.tree, scaled)
        grads.append(tree_entropy(marg, m.tree))
    return grads


class JensenCheck:
    """Boolean-like result of a reversed-Jensen test with domain diagnostics."""

    def __init__(self, holds: bool, domain: WeightDomain, domain_ok: bool, slack: float):
        self.holds = holds
        self.domain = domain
        self.domain_ok = domain_ok
        self.slack = slack

    def __bool__(self) -> bool:
        return self.holds

    def __repr__(self) -> str:
        return f"JensenCheck(holds={self.holds}, domain={self.domain}, domain_ok={self.domain_ok})"


def _classify_vector(weights) -> WeightDomain:
    live = [(i, w) for i, w in enumerate(weights) if abs(w) >= WEIGHT_EPS]
    if not live:
        return WeightDomain("mixed")
    if all(w > 0 for _, w in live):
        return WeightDomain("positive")
    heavy = [i for i, w in live if w > 1.0]
    rest_negative = all(w < 0 for _, w in live if not w > 1.0)
    if len(heavy) == 1 and rest_negative and len(live) > 1:
        return WeightDomain("negative", heavy[0])
    return WeightDomain("mixed")


def reverse_jensen_holds(member_values, weights, combined_value, slack: float = 1e-9) -> JensenCheck:
    """Check sum_i w_i f(x_i) <= f(sum_i w_i x_i) for caller-evaluated f.

    The inequality is guaranteed for a convex f exactly when one weight
    exceeds 1 and all the others are negative; ``domain_ok`` reports
    whether the supplied weights satisfy that hypothesis.  Mixed weights
    are still evaluated (the inequality simply need not hold).
    """
    weights = list(weights)
    member_values = list(member_values)
    if len(weights) != len(member_values):
        raise ValueError("one weight per member value required")
    total = sum(weights)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {total!r}, expected 1")
    lhs = sum(w * v for w, v in zip(weights, member_values))
    domain = _classify_vector(weights)
    holds = lhs <= combined_value + slack
    return JensenCheck(holds=holds, domain=domain, domain_ok=domain.kind == "negative", slack=slack)


@dataclass
class BoundResult:
    """A bound value with its direction and certification status."""

    value: float
    direction: str  # "upper" | "lower" | "none"
    certified: bool
    residual_max: float
    converged: bool
    iterations: int
    domain: WeightDomain
    trace: object = None

    def to_keyvalue_lines(self) -> list[str]:
        return [
            f"value={self.value!r}",
            f"direction={self.direction}",
            f"certified={self.certified}",
            f"residual_max={self.residual_max!r}",
            f"iterations={self.iterations}",
        ]


def certify_bound(model: PairwiseModel, ensemble: WeightedEnsemble, state: BeliefState) -> BoundResult:
    """Rebuild the decomposition behind a message-passing state and grade it.

    The reported value is the exact bound of the reconstructed
    decomposition; direction follows the weight domain; certification
    requires both a small reconstruction residual and engine convergence.
    Uncertified values are still reported.
    """
    decomposition = reconstruct_decomposition(model, ensemble, state.pseudomarginals)
    value = evaluate_psi(model, decomposition)
    domain = classify_weights(ensemble)
    if domain.kind == "positive":
        direction = "upper"
    elif domain.kind == "negative":
        direction = "lower"
    else:
        direction = "none"
    certified = bool(decomposition.residual_max <= RESIDUAL_CERTIFY_MAX and state.converged)
    return BoundResult(
        value=value,
        direction=direction,
        certified=certified,
        residual_max=decomposition.residual_max,
        converged=state.converged,
        iterations=state.iterations,
        domain=domain,
    )
