"""Finite Markov chains with an absorbing target set.

Everything here works on dense ``float64`` matrices. A chain is the triple
(states, absorbing set G, transition matrix P); the transient complement is
called A throughout. Distributions are plain 1-d arrays indexed like
``chain.states`` unless a function says otherwise.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import jsonschema
import numpy as np

from .errors import ChainSpecError, NonPrimitiveError

STOCHASTIC_TOL = 1e-12

_SCHEMA = json.loads(
    resources.files("hitlab").joinpath("schemas/chain_spec.schema.json").read_text()
)


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Validated chain; build with :func:`load_chain` or :meth:`from_matrix`."""

    states: tuple[str, ...]
    absorbing: tuple[str, ...]
    P: np.ndarray = field(repr=False)

    @classmethod
    def from_matrix(cls, states: Sequence[str], absorbing: Sequence[str], P) -> "MarkovChain":
        states = tuple(str(s) for s in states)
        absorbing = tuple(str(s) for s in absorbing)
        if len(set(states)) != len(states):
            raise ChainSpecError("duplicate state labels")
        if len(set(absorbing)) != len(absorbing):
            raise ChainSpecError("duplicate labels in absorbing set")
        unknown = set(absorbing) - set(states)
        if unknown:
            raise ChainSpecError(f"absorbing labels not in states: {sorted(unknown)}")
        if not absorbing:
            raise ChainSpecError("absorbing set G is empty")
        if len(absorbing) == len(states):
            raise ChainSpecError("transient set A is empty")

        P = np.array(P, dtype=np.float64)
        n = len(states)
        if P.shape != (n, n):
            raise ChainSpecError(f"P has shape {P.shape}, expected ({n}, {n})")

        lookup = {s: i for i, s in enumerate(states)}
        goal = np.array(sorted(lookup[s] for s in absorbing), dtype=np.intp)
        # G rows are replaced wholesale, so their stored values are never checked
        P[goal, :] = 0.0
        P[goal, goal] = 1.0

        if not np.all(np.isfinite(P)):
            raise ChainSpecError("P contains non-finite entries")
        if P.min() < 0.0 or P.max() > 1.0:
            bad = np.argwhere((P < 0.0) | (P > 1.0))[0]
            raise ChainSpecError(f"entry P[{bad[0]}][{bad[1]}] outside [0, 1]")
        sums = P.sum(axis=1)
        defect = np.abs(sums - 1.0)
        if defect.max() > STOCHASTIC_TOL:
            row = int(np.argmax(defect))
            raise ChainSpecError(
                f"non-stochastic row {row} ({states[row]!r}): sums to {sums[row]!r}"
            )
        P /= sums[:, None]
        P.setflags(write=False)
        return cls(states, tuple(states[i] for i in goal), P)

    @property
    def n(self) -> int:
        return len(self.states)

    @cached_property
    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def goal(self) -> np.ndarray:
        """Indices of G in state order."""
        g = np.array([self.index[s] for s in self.absorbing], dtype=np.intp)
        g.setflags(write=False)
        return g

    @cached_property
    def transient(self) -> np.ndarray:
        """Indices of A in state order."""
        mask = np.ones(self.n, dtype=bool)
        mask[self.goal] = False
        a = np.flatnonzero(mask)
        a.setflags(write=False)
        return a

    @property
    def transient_labels(self) -> tuple[str, ...]:
        return tuple(self.states[i] for i in self.transient)

    def to_document(self, alpha: Mapping | None = None) -> dict:
        doc = {
            "states": list(self.states),
            "absorbing": list(self.absorbing),
            "P": [[_compact(v) for v in row] for row in self.P.tolist()],
        }
        if alpha is not None:
            doc["alpha"] = dict(alpha)
        return doc


def _compact(v: float):
    # exact zeros as ints keep large dense documents small
    return 0 if v == 0.0 else v


@dataclass(frozen=True, eq=False)
class SubChain:
    """The sub-stochastic block of P on the transient states."""

    matrix: np.ndarray = field(repr=False)
    index: np.ndarray
    n_states: int
    primitivity_exponent: int | None = None

    @property
    def size(self) -> int:
        return len(self.index)


def load_chain(document: Mapping) -> MarkovChain:
    """Validate a chain-spec document (already parsed from JSON)."""
    try:
        jsonschema.validate(document, _SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ChainSpecError(f"schema violation at {where}: {exc.message}") from None
    rows = document["P"]
    if any(len(r) != len(rows) for r in rows):
        raise ChainSpecError("P is not square")
    return MarkovChain.from_matrix(document["states"], document["absorbing"], rows)


def read_chain(path) -> tuple[MarkovChain, np.ndarray | None]:
    """Load a chain-spec file; returns the chain and its embedded alpha, if any."""
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ChainSpecError(f"{path}: invalid JSON ({exc})") from None
    chain = load_chain(document)
    alpha = None
    if "alpha" in document:
        alpha = alpha_from_document(chain, document["alpha"])
    return chain, alpha


def write_chain(chain: MarkovChain, path, alpha: Mapping | None = None) -> None:
    Path(path).write_text(json.dumps(chain.to_document(alpha), separators=(",", ":")))


# ---------------------------------------------------------------- distributions


def check_distribution(p, size: int | None = None, name: str = "distribution") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or (size is not None and p.shape[0] != size):
        raise ValueError(f"{name} must be a vector of length {size}")
    if not np.all(np.isfinite(p)) or p.min() < 0.0:
        raise ValueError(f"{name} has negative or non-finite weights")
    if abs(p.sum() - 1.0) > STOCHASTIC_TOL:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def dirac(chain: MarkovChain, label: str) -> np.ndarray:
    if label not in chain.index:
        raise ChainSpecError(f"unknown state {label!r}")
    alpha = np.zeros(chain.n)
    alpha[chain.index[label]] = 1.0
    return alpha


def uniform(chain: MarkovChain, labels: Sequence[str] | None = None) -> np.ndarray:
    """Uniform law on ``labels`` (default: all of A)."""
    if labels is None:
        idx = chain.transient
    else:
        missing = [s for s in labels if s not in chain.index]
        if missing:
            raise ChainSpecError(f"unknown states {missing}")
        idx = np.array(sorted({chain.index[s] for s in labels}), dtype=np.intp)
    if len(idx) == 0:
        raise ChainSpecError("uniform over an empty set")
    alpha = np.zeros(chain.n)
    alpha[idx] = 1.0 / len(idx)
    return alpha


def weights(chain: MarkovChain, value) -> np.ndarray:
    """Normalize a weight list (state order) or a ``{label: weight}`` mapping."""
    if isinstance(value, Mapping):
        w = np.zeros(chain.n)
        for label, x in value.items():
            if label not in chain.index:
                raise ChainSpecError(f"unknown state {label!r}")
            w[chain.index[label]] = float(x)
    else:
        w = np.asarray(value, dtype=np.float64)
        if w.shape != (chain.n,):
            raise ChainSpecError(f"weights must have length {chain.n}")
    if not np.all(np.isfinite(w)) or w.min() < 0 or w.sum() <= 0:
        raise ChainSpecError("weights must be nonnegative with positive total")
    return w / w.sum()


def alpha_from_document(chain: MarkovChain, spec: Mapping) -> np.ndarray:
    kind = spec.get("kind")
    value = spec.get("value")
    if kind == "dirac":
        return dirac(chain, str(value))
    if kind == "uniform":
        return uniform(chain, None if value is None else [str(v) for v in value])
    if kind == "weights":
        return weights(chain, value)
    raise ChainSpecError(f"unknown alpha kind {kind!r}")


def parse_alpha(chain: MarkovChain, text: str) -> np.ndarray:
    """Parse the CLI grammar ``dirac:<label> | uniform | uniform-set:<a,b> | weights:<file>``."""
    kind, _, rest = text.partition(":")
    if kind == "dirac" and rest:
        return dirac(chain, rest)
    if kind == "uniform" and not rest:
        return uniform(chain)
    if kind == "uniform-set" and rest:
        return uniform(chain, [s for s in rest.split(",") if s])
    if kind == "weights" and rest:
        try:
            value = json.loads(Path(rest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ChainSpecError(f"cannot read weights file {rest!r}: {exc}") from None
        return weights(chain, value)
    raise ChainSpecError(f"bad alpha specification {text!r}")


def describe_alpha(chain: MarkovChain, alpha: np.ndarray) -> str:
    support = np.flatnonzero(alpha)
    if len(support) == 1:
        return f"dirac:{chain.states[support[0]]}"
    if np.allclose(alpha[support], 1.0 / len(support), rtol=0, atol=1e-15):
        if np.array_equal(support, chain.transient):
            return "uniform"
        return "uniform-set:" + ",".join(chain.states[i] for i in support)
    return "weights"


# ------------------------------------------------------------------ operations


def restrict(chain: MarkovChain) -> SubChain:
    """Transient block [P]_A, certified primitive.

    Primitivity is decided exactly from the transition graph (strong
    connectivity plus period one). For blocks up to 256 states the smallest
    exponent m with ``([P]_A)^m > 0`` is also computed and stored.
    """
    idx = chain.transient
    M = chain.P[np.ix_(idx, idx)].copy()
    M.setflags(write=False)
    adj = M > 0.0
    k = len(idx)
    if not _strongly_connected(adj):
        raise NonPrimitiveError("[P]_A is reducible (transient states do not communicate)")
    period = _period(adj)
    if period != 1:
        raise NonPrimitiveError(f"[P]_A is irreducible but periodic (period {period})")
    exponent = _primitivity_exponent(adj) if k <= 256 else None
    return SubChain(M, idx, chain.n, exponent)


def _reach(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    frontier = np.array([start])
    while frontier.size:
        nxt = adj[frontier].any(axis=0) & ~seen
        seen |= nxt
        frontier = np.flatnonzero(nxt)
    return seen


def _strongly_connected(adj: np.ndarray) -> bool:
    return bool(_reach(adj, 0).all() and _reach(adj.T, 0).all())


def _period(adj: np.ndarray) -> int:
    level = np.full(adj.shape[0], -1, dtype=np.int64)
    level[0] = 0
    frontier = np.array([0])
    depth = 0
    while frontier.size:
        depth += 1
        nxt = adj[frontier].any(axis=0) & (level < 0)
        level[nxt] = depth
        frontier = np.flatnonzero(nxt)
    src, dst = np.nonzero(adj)
    g = 0
    for d in np.unique(level[src] + 1 - level[dst]):
        g = math.gcd(g, int(abs(d)))
    return g


def _primitivity_exponent(adj: np.ndarray) -> int:
    k = adj.shape[0]
    wielandt = (k - 1) ** 2 + 1
    B = adj.astype(np.float64)
    power = B.copy()
    for m in range(1, wielandt + 1):
        if power.all():
            return m
        power = ((power @ B) > 0).astype(np.float64)
    raise NonPrimitiveError("no positive power within the Wielandt bound")


def propagate(chain: MarkovChain, alpha, t: int) -> np.ndarray:
    """Law of X_t started from ``alpha``, by repeated vector-matrix products."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    mu = check_distribution(alpha, chain.n, "alpha").copy()
    for _ in range(t):
        mu = mu @ chain.P
    return mu


def survival(chain: MarkovChain, alpha, horizon: int) -> np.ndarray:
    """``P(tau_G > t)`` for t = 0..horizon, evolving the full chain.

    The value at t is the mass left on A, which equals ``1 - mu_t(G)``
    without the cancellation of subtracting from one.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    mu = check_distribution(alpha, chain.n, "alpha").copy()
    A = chain.transient
    out = np.empty(horizon + 1)
    for t in range(horizon + 1):
        out[t] = mu[A].sum()
        if t < horizon:
            mu = mu @ chain.P
    return out


def absorption_matrix(chain: MarkovChain) -> np.ndarray:
    """``H[x, g] = P(X_{tau_G} = g | X_0 = x)`` for x in A, by a linear solve."""
    A, G = chain.transient, chain.goal
    M = chain.P[np.ix_(A, A)]
    rhs = chain.P[np.ix_(A, G)]
    lhs = np.eye(len(A)) - M
    try:
        return np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NonPrimitiveError(f"absorption system is singular: {exc}") from None


def absorption_profile(chain: MarkovChain, alpha) -> np.ndarray:
    """Law of the entrance state X_{tau_G}, as a vector over ``chain.absorbing``."""
    alpha = check_distribution(alpha, chain.n, "alpha")
    return alpha[chain.transient] @ absorption_matrix(chain) + alpha[chain.goal]


# ---------------------------------------------------------------- generators


def random_chain(
    rng: np.random.Generator,
    n_transient: int,
    n_goal: int = 1,
    leak: tuple[float, float] = (0.0, 0.3),
    density: float = 1.0,
) -> MarkovChain:
    """Random chain with a primitive transient block.

    Each transient state leaks to G with probability drawn from ``leak``
    (at least one state leaks). A ring x -> x+1 and positive self-loops are
    always present so the block is irreducible and aperiodic.
    """
    k, g = n_transient, n_goal
    W = rng.exponential(size=(k, k)) * (rng.random((k, k)) < density)
    W[np.arange(k), np.arange(k)] += rng.exponential(size=k) + 0.05
    W[np.arange(k), (np.arange(k) + 1) % k] += rng.exponential(size=k) + 0.05
    W /= W.sum(axis=1, keepdims=True)
    out = rng.uniform(*leak, size=k)
    out[rng.integers(k)] = max(out.max(), 0.5 * (leak[0] + leak[1]), 1e-3)
    split = rng.dirichlet(np.ones(g), size=k)
    P = np.zeros((k + g, k + g))
    P[:k, :k] = W * (1.0 - out)[:, None]
    P[:k, k:] = split * out[:, None]
    P[:k] /= P[:k].sum(axis=1, keepdims=True)
    P[k:, k:] = np.eye(g)
    states = [f"x{i}" for i in range(k)] + [f"g{j}" for j in range(g)]
    return MarkovChain.from_matrix(states, states[k:], P)
