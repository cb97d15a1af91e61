"""Weight and structure optimization for tree-ensemble bounds.

Lower bounds: one positive tree at weight beta+1 against negative trees
-beta*v_r, with beta moved by log-gradient ascent, v by conditional
gradient over the simplex (the linear subproblem is a maximum spanning
tree on mutual-information weights), and the positive tree periodically
reselected the same way.  Upper bounds: plain positive-weight ensembles
tightened by conditional gradient.  The mean-field baselines live here
too, both the dedicated coordinate-ascent solver and the limiting-case
run of the message-passing engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundResult, ZeroMarginalError, certify_bound
from .exact import MarginalSet, entropy_unary, mutual_information, tree_entropy
from .models import Edge, PairwiseModel, model_rng
from .propagation import (
    MEANFIELD,
    MU_FLOOR,
    MpOptions,
    free_energy,
    run_message_passing,
)
from .trees import (
    NegativeEnsembleView,
    Subtree,
    WeightDomain,
    WeightedEnsemble,
    classify_weights,
    cover_with_spanning_trees,
    is_v_acyclic,
    max_weight_spanning_tree,
    random_spanning_tree,
)

BETA_EXP_CLAMP = 50.0


class SkeletonError(ValueError):
    pass


@dataclass
class OptimizerOptions:
    beta_init: float = 10.0
    step_beta: float = 1.0
    step_v: float = 0.05
    outer_iters: int = 50
    mp: MpOptions = field(default_factory=MpOptions)
    reselect_positive: bool = True
    reselect_period: int = 5
    beta_max: float = 1e6  # effectively the mean-field limit
    seed: int | None = 0

    def __post_init__(self):
        if self.step_beta <= 0 or self.step_v < 0:
            raise ValueError("step sizes must be positive (step_v may be zero)")
        if self.beta_init <= 0:
            raise ValueError("beta_init must be positive")


@dataclass
class TraceRow:
    iteration: int
    beta: float
    bound: float
    certified: bool
    entropy_gap: float
    tree_edges: tuple[Edge, ...]


@dataclass
class OptimizerTrace:
    rows: list[TraceRow] = field(default_factory=list)
    beta_clamped_iterations: list[int] = field(default_factory=list)
    final_ensemble: WeightedEnsemble | None = None

    def to_csv(self) -> str:
        lines = ["iter,beta,bound,certified,entropy_gap,tree_edges"]
        for r in self.rows:
            edges = ";".join(f"{i}-{j}" for i, j in r.tree_edges)
            lines.append(
                f"{r.iteration},{r.beta!r},{r.bound!r},{r.certified},{r.entropy_gap!r},{edges}")
        return "\n".join(lines) + "\n"


def update_beta(beta: float, h_plus: float, v, h_minus, eps_beta: float) -> float:
    """Log-gradient ascent step on the positive-tree weight scale.

    beta' = beta * exp(eps * (H+ - sum_r v_r H-_r) * beta), with the
    exponent clamped to +-50 so a huge entropy gap cannot overflow.
    """
    gap = h_plus - float(np.dot(np.asarray(v), np.asarray(h_minus)))
    expo = eps_beta * gap * beta
    expo = min(max(expo, -BETA_EXP_CLAMP), BETA_EXP_CLAMP)
    return beta * math.exp(expo)


def mi_edge_weights(model: PairwiseModel, marginals: MarginalSet) -> dict[Edge, float]:
    return {
        (i, j): mutual_information(
            marginals.pairwise[(i, j)], marginals.unary[i], marginals.unary[j])
        for (i, j) in model.edges
    }


def reselect_positive_tree(model: PairwiseModel, marginals: MarginalSet,
                           mi_weights: dict[Edge, float] | None = None) -> Subtree:
    """Maximum spanning tree on current mutual informations (Chow-Liu)."""
    tree = max_weight_spanning_tree(model, mi_weights or mi_edge_weights(model, marginals))
    if not tree.is_spanning_tree():
        raise ValueError("model graph is disconnected")
    return tree


def update_v(v, tree_entropies, model: PairwiseModel, marginals: MarginalSet,
             eps_v: float, pool: list[Subtree],
             mi_weights: dict[Edge, float] | None = None):
    """Conditional-gradient step on the negative-tree weights.

    The linearized subproblem over the simplex of all spanning trees puts
    mass 1 on the minimum-entropy tree; with node entropies shared, that
    is the maximum mutual-information spanning tree.  The step moves v by
    eps_v toward that vertex, extending the pool when the tree is new.
    Returns (v', pool', chosen_tree); tree_entropies is the pool-aligned
    gradient, retained for diagnostics.
    """
    v = np.asarray(v, dtype=float)
    tree = max_weight_spanning_tree(model, mi_weights or mi_edge_weights(model, marginals))
    if not tree.is_spanning_tree():
        raise ValueError("model graph is disconnected")
    if eps_v == 0.0:
        return v, list(pool), tree
    for idx, member in enumerate(pool):
        if member.edge_set == tree.edge_set:
            vertex = np.zeros_like(v)
            vertex[idx] = 1.0
            return v + eps_v * (vertex - v), list(pool), tree
    return np.concatenate([(1.0 - eps_v) * v, [eps_v]]), list(pool) + [tree], tree


def _clamped_mu(ensemble: WeightedEnsemble) -> dict[Edge, float]:
    """Edge appearances pushed away from zero for the engine.

    Certification ignores this map (it works from the ensemble weights),
    so nudging a vanishing appearance to +-MU_FLOOR only perturbs which
    stationary point the engine finds.
    """
    mu = dict(ensemble.edge_appearance)
    for e, m in mu.items():
        if m == 0.0:
            mu[e] = -MU_FLOOR
        elif abs(m) < MU_FLOOR:
            mu[e] = math.copysign(MU_FLOOR, m)
    return mu


V_FLOOR = 1e-8


def _floored(v: np.ndarray) -> np.ndarray:
    """Keep every v_r strictly positive so no covered edge loses its weight."""
    if np.all(v >= V_FLOOR):
        return v
    out = np.maximum(v, V_FLOOR)
    return out / out.sum()


def _certify_or_report(model, ensemble, state, mu) -> BoundResult:
    """Certify when the pseudomarginals admit a reconstruction.

    Near-degenerate beliefs (edge appearances driven toward zero) make
    the canonical parameters diverge; such iterates report the free
    energy, uncertified.
    """
    try:
        return certify_bound(model, ensemble, state)
    except ZeroMarginalError:
        domain = classify_weights(ensemble)
        return BoundResult(
            value=free_energy(model, mu, state.pseudomarginals),
            direction={"positive": "upper", "negative": "lower"}.get(domain.kind, "none"),
            certified=False,
            residual_max=math.inf,
            converged=state.converged,
            iterations=state.iterations,
            domain=domain,
        )


def optimize_lower_bound(model: PairwiseModel, options: OptimizerOptions | None = None):
    """Negative-tree-weight bound optimizer.

    Starts from a random positive tree, a covering set of negative trees
    with uniform weights, and beta = beta_init; alternates message
    passing with the beta and v updates, reselecting the positive tree
    every reselect_period iterations when enabled.  Returns the best
    certified result seen (or the last, uncertified, when none certify)
    plus the full trace.
    """
    options = options or OptimizerOptions()
    if not model.is_connected():
        raise ValueError("model graph must be connected")
    t_plus = random_spanning_tree(model, options.seed)
    cover_seed = None if options.seed is None else options.seed + 1
    pool: list[Subtree] = list(cover_with_spanning_trees(model, cover_seed))
    if all(t.edge_set != t_plus.edge_set for t in pool):
        pool.append(t_plus)
    v = np.full(len(pool), 1.0 / len(pool))
    beta = float(options.beta_init)

    trace = OptimizerTrace()
    best: BoundResult | None = None
    last: BoundResult | None = None
    ensemble: WeightedEnsemble | None = None
    messages = None
    for it in range(options.outer_iters):
        v = _floored(v)
        view = NegativeEnsembleView.build(model, t_plus, beta, zip(pool, v))
        ensemble = view.to_ensemble()
        mu_run = _clamped_mu(ensemble)
        state = run_message_passing(model, mu_run, options.mp, init_messages=messages)
        messages = state.messages
        tau = state.pseudomarginals
        # node entropies are shared across trees; only the MI sums differ
        mi = mi_edge_weights(model, tau)
        h_nodes = sum(entropy_unary(t) for t in tau.unary)
        h_plus = h_nodes - sum(mi[e] for e in t_plus.edges)
        h_minus = [h_nodes - sum(mi[e] for e in t.edges) for t in pool]
        result = _certify_or_report(model, ensemble, state, mu_run)
        last = result
        gap = h_plus - float(np.dot(v, h_minus))
        trace.rows.append(TraceRow(it, beta, result.value, result.certified, gap, t_plus.edges))
        if result.certified and (best is None or result.value > best.value):
            best = result
        if abs(options.step_beta * gap * beta) > BETA_EXP_CLAMP:
            trace.beta_clamped_iterations.append(it)
        beta = min(update_beta(beta, h_plus, v, h_minus, options.step_beta), options.beta_max)
        v, pool, _ = update_v(v, h_minus, model, tau, options.step_v, pool, mi_weights=mi)
        if options.reselect_positive and options.reselect_period > 0 \
                and (it + 1) % options.reselect_period == 0:
            t_plus = reselect_positive_tree(model, tau, mi_weights=mi)
            if all(t.edge_set != t_plus.edge_set for t in pool):
                pool.append(t_plus)
                v = np.concatenate([v, [0.0]])
    trace.final_ensemble = ensemble
    out = best if best is not None else last
    out.trace = trace
    return out, trace


WEIGHT_INTERIOR_FLOOR = 1e-9


def optimize_upper_bound(model: PairwiseModel, options: OptimizerOptions | None = None):
    """Positive-weight ensemble bound tightened by conditional gradient.

    Each accepted step moves weight toward the maximum mutual-information
    spanning tree; a step that would raise the bound is rejected and the
    step size halved, so the accepted trace is non-increasing.  Weights
    are floored strictly inside the simplex so every covered edge keeps a
    usable appearance value.
    """
    options = options or OptimizerOptions()
    if not model.is_connected():
        raise ValueError("model graph must be connected")
    pool: list[Subtree] = list(cover_with_spanning_trees(model, options.seed))
    w = np.full(len(pool), 1.0 / len(pool))
    step = options.step_v if options.step_v > 0 else 0.05

    trace = OptimizerTrace()
    best: BoundResult | None = None
    last: BoundResult | None = None
    ensemble: WeightedEnsemble | None = None
    messages = None
    accepted_bound = math.inf
    accepted_w = w
    accepted_messages = None
    it = 0
    while it < options.outer_iters:
        w_eff = np.maximum(w, WEIGHT_INTERIOR_FLOOR)
        w_eff = w_eff / w_eff.sum()
        ensemble = WeightedEnsemble.build(model, zip(pool, w_eff))
        mu_run = _clamped_mu(ensemble)
        state = run_message_passing(model, mu_run, options.mp, init_messages=messages)
        result = _certify_or_report(model, ensemble, state, mu_run)
        if result.value > accepted_bound + 1e-12:
            # overshoot: back off and retry from the last accepted point
            # (pool may have grown since; new trees revert to zero weight)
            w = np.concatenate([accepted_w, np.zeros(len(pool) - len(accepted_w))])
            messages = accepted_messages
            step = max(step / 2.0, 1e-4)
            it += 1
            continue
        messages = state.messages
        accepted_bound = result.value
        accepted_w = w
        accepted_messages = state.messages
        last = result
        tau = state.pseudomarginals
        mi = mi_edge_weights(model, tau)
        h_nodes = sum(entropy_unary(t) for t in tau.unary)
        h_members = [h_nodes - sum(mi[e] for e in t.edges) for t in pool]
        gap = 0.0  # no positive/negative split in this regime
        trace.rows.append(TraceRow(it, math.nan, result.value, result.certified, gap, ()))
        if result.certified and (best is None or result.value < best.value):
            best = result
        v_new, pool, _ = update_v(w, h_members, model, tau, step, pool, mi_weights=mi)
        w = np.asarray(v_new)
        it += 1
    trace.final_ensemble = ensemble
    out = best if best is not None else last
    out.trace = trace
    return out, trace


MF_TOL = 1e-10
MF_MAX_SWEEPS = 10_000


def _mf_bound(model: PairwiseModel, tau: list[np.ndarray]) -> float:
    value = 0.0
    for i in range(model.node_count):
        value += float(np.dot(tau[i], model.unary_logpot[i]))
        value += entropy_unary(tau[i])
    for (i, j) in model.edges:
        value += float(tau[i] @ model.pairwise_logpot[(i, j)] @ tau[j])
    return value


def _mf_ascent(model: PairwiseModel, tau: list[np.ndarray]):
    """Coordinate ascent on the factorized free energy from a given start."""
    bound = _mf_bound(model, tau)
    sweeps = 0
    converged = False
    for sweep in range(1, MF_MAX_SWEEPS + 1):
        sweeps = sweep
        delta = 0.0
        for i in range(model.node_count):
            score = np.array(model.unary_logpot[i])
            for j in model.neighbors[i]:
                score = score + model.edge_logpot(i, j) @ tau[j]
            score = score - score.max()
            new = np.exp(score)
            new /= new.sum()
            delta = max(delta, float(np.max(np.abs(new - tau[i]))))
            tau[i] = new
        new_bound = _mf_bound(model, tau)
        # exact coordinate maximization cannot lower the objective
        assert new_bound >= bound - 1e-12, (new_bound, bound)
        bound = new_bound
        if delta < MF_TOL:
            converged = True
            break
    return tau, bound, sweeps, converged


def naive_mean_field(model: PairwiseModel, restarts: int = 1, seed: int | None = 0):
    """Fully factorized lower bound by coordinate ascent, best of several starts.

    The first start is uniform; the remaining restarts draw random node
    distributions from the seeded generator.  The value is a valid lower
    bound for any factorized beliefs, so results are always certified.
    """
    rng = model_rng(seed)
    best = None
    for r in range(max(1, restarts)):
        if r == 0:
            tau = [np.full(m, 1.0 / m) for m in model.cardinalities]
        else:
            tau = []
            for m in model.cardinalities:
                t = rng.random(m) + 1e-3
                tau.append(t / t.sum())
        tau, bound, sweeps, converged = _mf_ascent(model, tau)
        if best is None or bound > best[1]:
            best = (tau, bound, sweeps, converged)
    tau, bound, sweeps, converged = best
    marginals = MarginalSet(
        unary=[np.array(t) for t in tau],
        pairwise={(i, j): np.outer(tau[i], tau[j]) for (i, j) in model.edges},
    )
    result = BoundResult(
        value=bound,
        direction="lower",
        certified=True,
        residual_max=0.0,
        converged=converged,
        iterations=sweeps,
        domain=WeightDomain("negative", 0),
    )
    return result, marginals


def structured_mean_field(model: PairwiseModel, skeleton: Subtree,
                          options: MpOptions | None = None) -> BoundResult:
    """Tractable-subgraph lower bound via the engine's mean-field limit.

    Skeleton edges run at appearance 1, all others at the MEANFIELD
    sentinel; the bound is the free energy at the fixed point.  The
    skeleton must stay acyclic under the addition of any single model
    edge (the barely-acyclic case is unsupported).
    """
    if not is_v_acyclic(model, skeleton):
        raise SkeletonError(
            "skeleton is not v-acyclic: some model edge joins two nodes already "
            "connected through the skeleton; such subgraphs are unsupported")
    mu = {e: 1.0 if e in skeleton.edge_set else MEANFIELD for e in model.edges}
    state = run_message_passing(model, mu, options or MpOptions())
    value = free_energy(model, mu, state.pseudomarginals)
    return BoundResult(
        value=value,
        direction="lower",
        certified=state.converged,
        residual_max=0.0,
        converged=state.converged,
        iterations=state.iterations,
        domain=WeightDomain("negative", 0),
    )
