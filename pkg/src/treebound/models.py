"""Discrete pairwise Markov random fields stored as log-potential tables.

A model holds one table of natural-log potentials per node and per edge.
Potentials (``psi``) only appear on the way in and out of the text file
format; everything downstream works in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

Edge = tuple[int, int]

MODEL_HEADER = "MARKOV"

# Fixed, documented RNG for all generators: numpy's PCG64 behind
# default_rng, seeded with a 64-bit integer.  Draw order is nodes in index
# order, then edges in lexicographic order.
def model_rng(seed: int | None) -> np.random.Generator:
    return np.random.default_rng(seed)


class ModelFormatError(ValueError):
    """Malformed model file; message carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def canonical_edge(i: int, j: int) -> Edge:
    if i == j:
        raise ValueError(f"self-loop ({i},{j}) is not a valid edge")
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True, eq=False)
class PairwiseModel:
    """A pairwise MRF: cardinalities, simple undirected edges, log tables."""

    cardinalities: tuple[int, ...]
    edges: tuple[Edge, ...]
    unary_logpot: tuple[np.ndarray, ...]
    pairwise_logpot: dict[Edge, np.ndarray]

    def __post_init__(self):
        n = len(self.cardinalities)
        if n == 0:
            raise ValueError("model must have at least one node")
        for i, m in enumerate(self.cardinalities):
            if m < 2:
                raise ValueError(f"node {i}: cardinality {m} < 2")
        seen = set()
        for e in self.edges:
            i, j = e
            if not (0 <= i < j < n):
                raise ValueError(f"edge {e} is not a sorted pair of node indices")
            if e in seen:
                raise ValueError(f"duplicate edge {e}")
            seen.add(e)
        if tuple(sorted(self.edges)) != self.edges:
            object.__setattr__(self, "edges", tuple(sorted(self.edges)))
        if len(self.unary_logpot) != n:
            raise ValueError("one unary table per node required")
        unary = []
        for i, t in enumerate(self.unary_logpot):
            t = np.asarray(t, dtype=float)
            if t.shape != (self.cardinalities[i],):
                raise ValueError(f"node {i}: unary table shape {t.shape} does not match cardinality")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"node {i}: non-finite log-potential entry")
            t.setflags(write=False)
            unary.append(t)
        object.__setattr__(self, "unary_logpot", tuple(unary))
        if set(self.pairwise_logpot) != set(self.edges):
            raise ValueError("pairwise tables must cover exactly the edge list")
        pw = {}
        for (i, j) in self.edges:
            t = np.asarray(self.pairwise_logpot[(i, j)], dtype=float)
            want = (self.cardinalities[i], self.cardinalities[j])
            if t.shape != want:
                raise ValueError(f"edge ({i},{j}): table shape {t.shape}, expected {want}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"edge ({i},{j}): non-finite log-potential entry")
            t.setflags(write=False)
            pw[(i, j)] = t
        object.__setattr__(self, "pairwise_logpot", pw)

    @property
    def node_count(self) -> int:
        return len(self.cardinalities)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    def edge_logpot(self, i: int, j: int) -> np.ndarray:
        """Pairwise table oriented (i, j); transposes the stored table if i > j."""
        if i < j:
            return self.pairwise_logpot[(i, j)]
        return self.pairwise_logpot[(j, i)].T

    def state_space_size(self) -> int:
        return math.prod(self.cardinalities)

    def is_connected(self) -> bool:
        if self.node_count == 1:
            return True
        seen = {0}
        stack = [0]
        while stack:
            for k in self.neighbors[stack.pop()]:
                if k not in seen:
                    seen.add(k)
                    stack.append(k)
        return len(seen) == self.node_count

    def __eq__(self, other) -> bool:
        if not isinstance(other, PairwiseModel):
            return NotImplemented
        return (
            self.cardinalities == other.cardinalities
            and self.edges == other.edges
            and all(np.array_equal(a, b) for a, b in zip(self.unary_logpot, other.unary_logpot))
            and all(np.array_equal(self.pairwise_logpot[e], other.pairwise_logpot[e]) for e in self.edges)
        )

    def allclose(self, other: "PairwiseModel", atol: float = 1e-12) -> bool:
        return (
            self.cardinalities == other.cardinalities
            and self.edges == other.edges
            and all(np.allclose(a, b, atol=atol) for a, b in zip(self.unary_logpot, other.unary_logpot))
            and all(
                np.allclose(self.pairwise_logpot[e], other.pairwise_logpot[e], atol=atol)
                for e in self.edges
            )
        )


@dataclass
class Potentials:
    """Log-potential tables over all nodes and a subset of edges.

    Value-style companion to PairwiseModel used for tree-restricted
    parameter vectors; mutable so builders can accumulate into it.
    """

    unary: list[np.ndarray]
    pairwise: dict[Edge, np.ndarray]

    @classmethod
    def zeros_for(cls, model: PairwiseModel, edges=()) -> "Potentials":
        return cls(
            unary=[np.zeros(m) for m in model.cardinalities],
            pairwise={canonical_edge(*e): np.zeros((model.cardinalities[min(e)], model.cardinalities[max(e)])) for e in edges},
        )

    @classmethod
    def of_model(cls, model: PairwiseModel) -> "Potentials":
        return cls(
            unary=[np.array(t) for t in model.unary_logpot],
            pairwise={e: np.array(model.pairwise_logpot[e]) for e in model.edges},
        )

    def copy(self) -> "Potentials":
        return Potentials([np.array(t) for t in self.unary], {e: np.array(t) for e, t in self.pairwise.items()})

    def scaled(self, factor: float) -> "Potentials":
        return Potentials([factor * t for t in self.unary], {e: factor * t for e, t in self.pairwise.items()})

    def add_into(self, other: "Potentials") -> None:
        """Accumulate other's tables into self (self may gain edge tables)."""
        for i, t in enumerate(other.unary):
            self.unary[i] = self.unary[i] + t
        for e, t in other.pairwise.items():
            if e in self.pairwise:
                self.pairwise[e] = self.pairwise[e] + t
            else:
                self.pairwise[e] = np.array(t)

    def max_abs(self) -> float:
        vals = [float(np.max(np.abs(t))) for t in self.unary]
        vals += [float(np.max(np.abs(t))) for t in self.pairwise.values()]
        return max(vals) if vals else 0.0


@dataclass(frozen=True)
class ModelFamilySpec:
    """Recipe for one generated experimental model."""

    family: str  # "ising-grid" or "triangle"
    rows: int = 1
    cols: int = 1
    coupling: str = "mixed"  # "attractive" or "mixed"
    strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("ising-grid", "triangle"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.rows * self.cols < 1:
            raise ValueError("rows*cols must be >= 1")
        if self.strength < 0:
            raise ValueError("coupling strength must be nonnegative")
        if self.coupling not in ("attractive", "mixed"):
            raise ValueError(f"unknown coupling {self.coupling!r}")


def grid_edges(rows: int, cols: int) -> list[Edge]:
    """Lattice edges for row-major node numbering."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return sorted(edges)


def gen_ising_grid(spec: ModelFamilySpec) -> PairwiseModel:
    """Random Ising grid with +/-1 spins encoded as states {0, 1}.

    State 0 maps to -1 and state 1 to +1, so the unary table for a field
    theta_i is [-theta_i, +theta_i] and the pairwise table for a coupling
    theta_ij is [[+t, -t], [-t, +t]].  Fields are drawn U(-0.05, 0.05);
    couplings U(0, c) when attractive, U(-c, c) when mixed.  Draws are
    half-open and taken node-first then edge-lexicographic, so a fixed
    seed reproduces the model bit for bit.
    """
    if spec.family != "ising-grid":
        raise ValueError("spec.family must be 'ising-grid'")
    n = spec.rows * spec.cols
    rng = model_rng(spec.seed)
    fields = [rng.uniform(-0.05, 0.05) for _ in range(n)]
    edges = grid_edges(spec.rows, spec.cols)
    couplings = []
    for _ in edges:
        if spec.coupling == "attractive":
            couplings.append(rng.uniform(0.0, spec.strength))
        else:
            couplings.append(rng.uniform(-spec.strength, spec.strength))
    unary = tuple(np.array([-h, h]) for h in fields)
    pairwise = {e: np.array([[t, -t], [-t, t]]) for e, t in zip(edges, couplings)}
    return PairwiseModel(
        cardinalities=(2,) * n,
        edges=tuple(edges),
        unary_logpot=unary,
        pairwise_logpot=pairwise,
    )


def triangle_example() -> PairwiseModel:
    """Three binary nodes on a cycle with mild agreement potentials.

    psi_i = [1, 1]; psi_01 = [[1, .8], [.8, 1]]; psi_02 = psi_12 =
    [[1, .5], [.5, 1]].  Exact partition function is 4.1.
    """
    same_8 = np.log(np.array([[1.0, 0.8], [0.8, 1.0]]))
    same_5 = np.log(np.array([[1.0, 0.5], [0.5, 1.0]]))
    return PairwiseModel(
        cardinalities=(2, 2, 2),
        edges=((0, 1), (0, 2), (1, 2)),
        unary_logpot=(np.zeros(2), np.zeros(2), np.zeros(2)),
        pairwise_logpot={(0, 1): same_8, (0, 2): same_5, (1, 2): same_5},
    )


def generate_model(spec: ModelFamilySpec) -> PairwiseModel:
    if spec.family == "triangle":
        return triangle_example()
    return gen_ising_grid(spec)


def _tokenize(text: str):
    """Yield (token, line_number) skipping blank lines and '#' comments."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        for tok in body.split():
            yield tok, lineno


class _TokenStream:
    def __init__(self, text: str):
        self._toks = list(_tokenize(text))
        self._pos = 0
        self.last_line = 1

    def next(self, what: str) -> tuple[str, int]:
        if self._pos >= len(self._toks):
            raise ModelFormatError(f"unexpected end of file while reading {what}", self.last_line)
        tok, line = self._toks[self._pos]
        self._pos += 1
        self.last_line = line
        return tok, line

    def next_int(self, what: str) -> tuple[int, int]:
        tok, line = self.next(what)
        try:
            return int(tok), line
        except ValueError:
            raise ModelFormatError(f"expected integer for {what}, got {tok!r}", line) from None

    def next_float(self, what: str) -> tuple[float, int]:
        tok, line = self.next(what)
        try:
            return float(tok), line
        except ValueError:
            raise ModelFormatError(f"expected number for {what}, got {tok!r}", line) from None

    def exhausted(self) -> bool:
        return self._pos >= len(self._toks)


def load_model(text: str) -> PairwiseModel:
    """Parse the line-oriented MARKOV text format into a model.

    The file lists potentials (psi), not logs; tables are converted with
    log on the way in.  Zero entries are rejected because the model
    requires finite log-potentials.
    """
    ts = _TokenStream(text)
    header, line = ts.next("header")
    if header != MODEL_HEADER:
        raise ModelFormatError(f"malformed header: expected {MODEL_HEADER!r}, got {header!r}", line)
    n, line = ts.next_int("node count")
    if n < 1:
        raise ModelFormatError("node count must be positive", line)
    cards = []
    for i in range(n):
        m, line = ts.next_int(f"cardinality of node {i}")
        if m < 2:
            raise ModelFormatError(f"node {i}: cardinality {m} < 2", line)
        cards.append(m)
    fcount, line = ts.next_int("factor count")
    if fcount < 0:
        raise ModelFormatError("factor count must be nonnegative", line)

    scopes: list[tuple[tuple[int, ...], int]] = []
    unary_seen: set[int] = set()
    edges_seen: set[Edge] = set()
    for f in range(fcount):
        arity, line = ts.next_int(f"arity of factor {f}")
        if arity not in (1, 2):
            raise ModelFormatError(f"unsupported factor arity {arity}", line)
        scope = []
        for k in range(arity):
            v, line = ts.next_int(f"scope index {k} of factor {f}")
            if not (0 <= v < n):
                raise ModelFormatError(f"factor {f}: node index {v} out of range", line)
            scope.append(v)
        if arity == 1:
            if scope[0] in unary_seen:
                raise ModelFormatError(f"duplicate unary factor on node {scope[0]}", line)
            unary_seen.add(scope[0])
        else:
            if scope[0] == scope[1]:
                raise ModelFormatError(f"factor {f}: self-loop on node {scope[0]}", line)
            e = canonical_edge(*scope)
            if e in edges_seen:
                raise ModelFormatError(f"duplicate edge {e}", line)
            edges_seen.add(e)
        scopes.append((tuple(scope), line))

    unary = [np.zeros(m) for m in cards]
    pairwise: dict[Edge, np.ndarray] = {}
    for scope, scope_line in scopes:
        if len(scope) == 1:
            (i,) = scope
            size = cards[i]
            shape: tuple[int, ...] = (size,)
        else:
            i, j = scope
            size = cards[i] * cards[j]
            shape = (cards[i], cards[j])
        vals = np.empty(size)
        for k in range(size):
            try:
                v, line = ts.next_float(f"table entry {k} of factor with scope {scope}")
            except ModelFormatError as err:
                raise ModelFormatError(
                    f"table length mismatch for factor with scope {scope}: {err}", err.line
                ) from None
            if v <= 0:
                raise ModelFormatError(
                    f"nonpositive potential {v!r} for factor with scope {scope} "
                    "(log-potentials must stay finite)", line)
            vals[k] = v
        table = np.log(vals.reshape(shape))
        if len(scope) == 1:
            unary[scope[0]] = table
        else:
            i, j = scope
            if i < j:
                pairwise[(i, j)] = table
            else:
                pairwise[(j, i)] = table.T
    if not ts.exhausted():
        tok, line = ts.next("eof")
        raise ModelFormatError(f"table length mismatch: trailing token {tok!r}", line)
    return PairwiseModel(
        cardinalities=tuple(cards),
        edges=tuple(sorted(pairwise)),
        unary_logpot=tuple(unary),
        pairwise_logpot=pairwise,
    )


def save_model(model: PairwiseModel) -> str:
    """Serialize a model to the MARKOV text format (round-trips load_model)."""
    out = [MODEL_HEADER, str(model.node_count), " ".join(str(m) for m in model.cardinalities)]
    factors: list[tuple[tuple[int, ...], np.ndarray]] = []
    for i in range(model.node_count):
        factors.append(((i,), model.unary_logpot[i]))
    for e in model.edges:
        factors.append((e, model.pairwise_logpot[e]))
    out.append(str(len(factors)))
    for scope, _ in factors:
        out.append(f"{len(scope)} " + " ".join(str(v) for v in scope))
    for _, table in factors:
        psi = np.exp(table).ravel()
        out.append(" ".join(f"{v:.17g}" for v in psi))
    return "\n".join(out) + "\n"
