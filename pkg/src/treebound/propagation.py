"""Reweighted message passing over signed edge appearance values.

One update rule covers the whole family: positive appearances give the
upper-bound regime, negative ones the lower-bound regime, all-ones is
plain loopy sum-product.  The sentinel value MEANFIELD (stored as -inf)
stands for the limit of an edge appearance going to minus infinity; such
edges use the geometric-mean form of the update, which is the power-mean
limit as the exponent 1/mu approaches zero.

Updates are synchronous (Jacobi): every directed message of a sweep is
computed from the previous sweep's state, then written at once, so the
iteration is deterministic and order-free.  Damping mixes old and new
messages convexly in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from ._math import logsumexp, softmax

from .exact import MarginalSet, entropy_unary, mutual_information
from .models import Edge, PairwiseModel, model_rng

MEANFIELD = float("-inf")

MU_FLOOR = 1e-6  # finite appearances closer to zero than this are rejected


class InvalidEdgeAppearanceError(ValueError):
    pass


class NonFiniteMessageError(RuntimeError):
    def __init__(self, edge, iteration):
        super().__init__(f"non-finite message on directed edge {edge} at sweep {iteration}")
        self.edge = edge
        self.iteration = iteration


class MeanFieldEdgeError(ValueError):
    """A MEANFIELD edge carries nonzero mutual information."""


def validate_mu(model: PairwiseModel, mu: dict[Edge, float]) -> None:
    if set(mu) != set(model.edges):
        raise InvalidEdgeAppearanceError("appearance map must cover exactly the model edges")
    for e, v in mu.items():
        if v == MEANFIELD:
            continue
        if not np.isfinite(v):
            raise InvalidEdgeAppearanceError(f"edge {e}: appearance {v!r} is not finite")
        if abs(v) < MU_FLOOR:
            raise InvalidEdgeAppearanceError(
                f"edge {e}: |appearance| = {abs(v)!r} < {MU_FLOOR}; "
                "remove the edge from the model instead of running it near zero")


@dataclass
class MpOptions:
    max_iters: int = 2000
    tol: float = 1e-8
    damping: float = 0.5
    seed: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must lie in [0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class BeliefState:
    """Directed log-messages plus the pseudomarginals they induce."""

    messages: dict[tuple[int, int], np.ndarray]
    pseudomarginals: MarginalSet
    converged: bool
    iterations: int
    final_delta: float


class _Plan:
    """Directed edges grouped by (source card, target card, finite?)."""

    def __init__(self, model: PairwiseModel, mu: dict[Edge, float]):
        self.model = model
        n = model.node_count
        cards = model.cardinalities
        self.max_card = max(cards)
        self.theta_buf = np.zeros((n, self.max_card))
        for i in range(n):
            self.theta_buf[i, : cards[i]] = model.unary_logpot[i]

        directed = []
        for (i, j) in model.edges:
            directed.append((i, j))
            directed.append((j, i))
        directed.sort()
        self.directed = directed

        group_of: dict[tuple[int, int], tuple] = {}
        pos_of: dict[tuple[int, int], int] = {}
        buckets: dict[tuple, list] = {}
        for (s, d) in directed:
            m = mu[(s, d) if s < d else (d, s)]
            key = (cards[s], cards[d], m != MEANFIELD)
            buckets.setdefault(key, []).append((s, d, m))
            group_of[(s, d)] = key
            pos_of[(s, d)] = len(buckets[key]) - 1

        self.groups = {}
        for key, entries in buckets.items():
            a, b, finite = key
            src = np.array([s for s, _, _ in entries])
            dst = np.array([d for _, d, _ in entries])
            theta = np.stack([model.edge_logpot(s, d) for s, d, _ in entries])
            muv = np.array([m for _, _, m in entries]) if finite else None
            rev_key = [group_of[(d, s)] for s, d, _ in entries]
            rev_pos = np.array([pos_of[(d, s)] for s, d, _ in entries])
            # all reverse edges of one group share the reverse group key
            assert all(k == rev_key[0] for k in rev_key)
            self.groups[key] = dict(
                src=src, dst=dst, theta=theta, mu=muv,
                rev_key=rev_key[0], rev_pos=rev_pos,
                edges=[(s, d) for s, d, _ in entries],
            )

    def init_messages(self, seed: int | None) -> dict[tuple, np.ndarray]:
        msgs = {}
        for key, g in self.groups.items():
            b = key[1]
            msgs[key] = np.full((len(g["src"]), b), -np.log(b))
        if seed is not None:
            rng = model_rng(seed)
            per_edge = {}
            for (s, d) in self.directed:
                u = rng.random(self.model.cardinalities[d])
                per_edge[(s, d)] = u - logsumexp(u)
            for key, g in self.groups.items():
                for pos, e in enumerate(g["edges"]):
                    msgs[key][pos] = per_edge[e]
        return msgs

    def from_dict(self, messages: dict[tuple[int, int], np.ndarray]) -> dict[tuple, np.ndarray]:
        msgs = {}
        for key, g in self.groups.items():
            msgs[key] = np.stack([np.asarray(messages[e], dtype=float) for e in g["edges"]])
        return msgs

    def to_dict(self, msgs: dict[tuple, np.ndarray]) -> dict[tuple[int, int], np.ndarray]:
        out = {}
        for key, g in self.groups.items():
            for pos, e in enumerate(g["edges"]):
                out[e] = np.array(msgs[key][pos])
        return out

    def node_sums(self, msgs: dict[tuple, np.ndarray]) -> np.ndarray:
        """theta_i plus all incoming log-messages, padded to (n, max_card)."""
        s = self.theta_buf.copy()
        for key, g in self.groups.items():
            b = key[1]
            np.add.at(s[:, :b], g["dst"], msgs[key])
        return s


def run_message_passing(
    model: PairwiseModel,
    mu: dict[Edge, float],
    options: MpOptions | None = None,
    init_messages: dict[tuple[int, int], np.ndarray] | None = None,
    trace_sink=None,
) -> BeliefState:
    """Iterate the damped reweighted update until the log-messages settle.

    For an edge with appearance m, the new message into x_j is

        [ sum_{x_i} psi_i psi_ij^(1/m) m_in(x_i) / m_ji(x_i)^(1/m) ]^m

    computed in the log domain with max-shifted sums.  MEANFIELD edges use
    log m_ij(x_j) = sum_{x_i} b_i(x_i) theta_ij(x_i, x_j) with b_i the
    current belief at i.  Messages start uniform, or from seeded positive
    perturbations when options.seed is set, or from init_messages.
    """
    options = options or MpOptions()
    validate_mu(model, mu)
    plan = _Plan(model, mu)
    if init_messages is not None:
        msgs = plan.from_dict(init_messages)
    else:
        msgs = plan.init_messages(options.seed)
    lam = options.damping

    converged = False
    delta = np.inf
    sweeps = 0
    for sweep in range(1, options.max_iters + 1):
        sweeps = sweep
        s_buf = plan.node_sums(msgs)
        staged = {}
        delta = 0.0
        for key, g in plan.groups.items():
            a, b, finite = key
            old = msgs[key]
            s_src = s_buf[g["src"], :a]
            if finite:
                muv = g["mu"]
                rev = msgs[g["rev_key"]][g["rev_pos"]]
                x = s_src - rev / muv[:, None]
                z = x[:, :, None] + g["theta"] / muv[:, None, None]
                upd = muv[:, None] * logsumexp(z, axis=1)
            else:
                belief = softmax(s_src, axis=1)
                upd = np.einsum("ka,kab->kb", belief, g["theta"])
            upd = upd - logsumexp(upd, axis=1, keepdims=True)
            new = (1.0 - lam) * upd + lam * old
            new = new - logsumexp(new, axis=1, keepdims=True)
            if not np.all(np.isfinite(new)):
                bad = int(np.argwhere(~np.isfinite(new).all(axis=1))[0][0])
                raise NonFiniteMessageError(g["edges"][bad], sweep)
            staged[key] = new
            delta = max(delta, float(np.max(np.abs(new - old))))
        msgs = staged
        if trace_sink is not None:
            tau = _pseudomarginals(model, mu, plan, msgs)
            trace_sink.append((sweep, delta, free_energy(model, mu, tau)))
        if delta < options.tol:
            converged = True
            break

    message_dict = plan.to_dict(msgs)
    tau = _pseudomarginals(model, mu, plan, msgs)
    return BeliefState(
        messages=message_dict,
        pseudomarginals=tau,
        converged=converged,
        iterations=sweeps,
        final_delta=delta,
    )


def _pseudomarginals(model, mu, plan: _Plan, msgs) -> MarginalSet:
    s_buf = plan.node_sums(msgs)
    cards = model.cardinalities
    unary = [softmax(s_buf[i, : cards[i]]) for i in range(model.node_count)]
    message_of = {}
    for key, g in plan.groups.items():
        for pos, e in enumerate(g["edges"]):
            message_of[e] = msgs[key][pos]
    pairwise = {}
    for (i, j) in model.edges:
        m = mu[(i, j)]
        if m == MEANFIELD:
            pairwise[(i, j)] = np.outer(unary[i], unary[j])
            continue
        l_ij = message_of[(i, j)]
        l_ji = message_of[(j, i)]
        s_i = s_buf[i, : cards[i]]
        s_j = s_buf[j, : cards[j]]
        table = (
            (s_i - l_ji / m)[:, None]
            + (s_j - l_ij / m)[None, :]
            + model.pairwise_logpot[(i, j)] / m
        )
        pairwise[(i, j)] = softmax(table.ravel()).reshape(table.shape)
    return MarginalSet(unary=unary, pairwise=pairwise)


def compute_pseudomarginals(model: PairwiseModel, mu: dict[Edge, float], state: BeliefState) -> MarginalSet:
    """Node and edge beliefs induced by a message state.

    Node beliefs multiply the unary potential by every incoming message;
    edge beliefs additionally carry psi_ij^(1/mu) and divide out the two
    crossing messages at power 1/mu.  MEANFIELD edges get the product of
    their endpoint beliefs.
    """
    validate_mu(model, mu)
    plan = _Plan(model, mu)
    msgs = plan.from_dict(state.messages)
    return _pseudomarginals(model, mu, plan, msgs)


def free_energy(model: PairwiseModel, mu: dict[Edge, float], marginals: MarginalSet) -> float:
    """Energy plus node entropies minus appearance-weighted mutual informations.

    MEANFIELD edges must carry (numerically) independent beliefs; they
    contribute their energy term but no mutual-information term.
    """
    validate_mu(model, mu)
    value = 0.0
    for i in range(model.node_count):
        value += float(np.dot(marginals.unary[i], model.unary_logpot[i]))
        value += entropy_unary(marginals.unary[i])
    for (i, j) in model.edges:
        tau_ij = marginals.pairwise[(i, j)]
        value += float(np.sum(tau_ij * model.pairwise_logpot[(i, j)]))
        info = mutual_information(tau_ij, marginals.unary[i], marginals.unary[j])
        if mu[(i, j)] == MEANFIELD:
            if info > 1e-8:
                raise MeanFieldEdgeError(
                    f"edge ({i},{j}): mutual information {info!r} on a MEANFIELD edge")
            continue
        value -= mu[(i, j)] * info
    return value
