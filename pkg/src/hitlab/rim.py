"""The rim: a ring of 4**n states with spokes to a single absorbing state.

States are the residues 0..4**n - 1 plus ``"G"``. Class 0 holds the
multiples of 4 (the only states with a spoke to G), class 1 the odd
residues and class 2 the rest. The transition weights are chosen so that the
Perron data are explicit and the Doob transform is the lazy walk on the ring.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .chain import MarkovChain
from .errors import SimulationError
from .montecarlo import SimulationConfig
from .spectral import SpectralTriple

N_CAP = 6


@dataclass(frozen=True)
class RimParams:
    n: int
    lam: float

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValueError("n must be an integer >= 1")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lambda must lie strictly between 0 and 1")

    @property
    def size(self) -> int:
        return 4**self.n


def _classes(m: int) -> np.ndarray:
    x = np.arange(m)
    return np.where(x % 4 == 0, 0, np.where(x % 2 == 1, 1, 2))


def _class_weights(lam: float):
    q = 8.0 - 8.0 * lam + lam**2
    return {
        "stay": lam / 2.0,
        "0_side": lam**2 * (2.0 - lam) / (32.0 - 32.0 * lam + 4.0 * lam**2),
        "0_goal": (8.0 - 12.0 * lam + 4.0 * lam**2) / q,
        "1_to_0": q / (4.0 * (2.0 - lam)),
        "1_to_2": lam**2 / (4.0 * (2.0 - lam)),
        "2_side": (2.0 - lam) / 4.0,
    }


def rim_matrix(params: RimParams) -> np.ndarray:
    m, w = params.size, _class_weights(params.lam)
    cls = _classes(m)
    P = np.zeros((m + 1, m + 1))
    x = np.arange(m)
    P[x, x] = w["stay"]
    for side in (-1, 1):
        y = (x + side) % m
        val = np.where(cls == 0, w["0_side"],
                       np.where(cls == 2, w["2_side"],
                                np.where(cls[y] == 0, w["1_to_0"], w["1_to_2"])))
        P[x, y] += val
    P[x[cls == 0], m] = w["0_goal"]
    P[m, m] = 1.0
    return P


def build_rim(params: RimParams, max_n: int = N_CAP) -> MarkovChain:
    if params.n > max_n:
        raise ValueError(f"n = {params.n} exceeds the cap {max_n} ({4**max_n} ring states)")
    states = [str(i) for i in range(params.size)] + ["G"]
    return MarkovChain.from_matrix(states, ["G"], rim_matrix(params))


def rim_spectral_oracle(params: RimParams) -> SpectralTriple:
    """Closed-form Perron data of the rim's transient block."""
    lam, m = params.lam, params.size
    q = 8.0 - 8.0 * lam + lam**2
    cls = _classes(m)
    mu = np.choose(cls, [q / (2.0 - lam), lam, lam**2 / (2.0 - lam)]) / m
    gamma = np.choose(cls, [(2.0 - lam) / q, 1.0 / lam, (2.0 - lam) / lam**2])
    M = rim_matrix(params)[:m, :m]
    M.setflags(write=False)
    for arr in (mu, gamma):
        arr.setflags(write=False)
    return SpectralTriple(
        lam=lam,
        mu_star=mu,
        gamma=gamma,
        index=np.arange(m),
        n_states=m + 1,
        block=M,
        residual_left=float(np.abs(mu @ M - lam * mu).sum()),
        residual_right=float(np.abs(M @ gamma - lam * gamma).max() / gamma.max()),
    )


def rim_projected(lam: float) -> MarkovChain:
    """Lumped chain on the classes {0, 1, 2} and G."""
    w = _class_weights(lam)
    P = np.array([
        [w["stay"], 2.0 * w["0_side"], 0.0, w["0_goal"]],
        [w["1_to_0"], w["stay"], w["1_to_2"], 0.0],
        [0.0, 2.0 * w["2_side"], w["stay"], 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    return MarkovChain.from_matrix(["0", "1", "2", "G"], ["G"], P)


def projection(n: int) -> np.ndarray:
    """Class index of every rim state, with G mapped to 3."""
    return np.concatenate([_classes(4**n), [3]])


# ------------------------------------------------------------ halting sets


@dataclass(frozen=True, eq=False)
class HaltingSets:
    """Nested target sets for a walk that first hit class 0 at ``origin``.

    ``levels[k]`` is sorted; ``parent[k][i]`` is the parent of ``levels[k][i]``
    in ``levels[k - 1]`` (``parent[0]`` is empty).
    """

    n: int
    origin: int
    levels: tuple = field(repr=False)
    parent: tuple = field(repr=False)

    @property
    def modulus(self) -> int:
        return 4**self.n

    @property
    def opposite(self) -> int:
        return (self.origin + 2 ** (2 * self.n - 1)) % self.modulus


def halting_sets(n: int, origin: int = 0) -> HaltingSets:
    """Build ``S_k = {y : y + d or y - d in S_(k-1)}`` with ``d = 2**(2n-k-1)``.

    ``origin`` must be a multiple of 4 (the first class-0 state visited).
    """
    m = 4**n
    if origin % 4 != 0 or not 0 <= origin < m:
        raise ValueError("origin must be a multiple of 4 on the ring")
    levels = [np.array([origin])]
    parents = [np.zeros(0, dtype=np.int64)]
    for k in range(1, 2 * n):
        d = 2 ** (2 * n - k - 1)
        prev = set(levels[-1].tolist())
        cand = sorted({(y + s) % m for y in prev for s in (d, -d)})
        par = []
        for y in cand:
            hits = [p for p in ((y + d) % m, (y - d) % m) if p in prev]
            if len(hits) != 1:
                raise AssertionError(f"state {y} has {len(hits)} parents at level {k}")
            par.append(hits[0])
        levels.append(np.array(cand))
        parents.append(np.array(par))
    return HaltingSets(n, origin, tuple(levels), tuple(parents))


def level_lookup(n: int) -> np.ndarray:
    """``L[offset] = k`` when ``origin + offset`` belongs to level k (for any origin)."""
    hs = halting_sets(n, 0)
    table = np.full(4**n, -1, dtype=np.int64)
    for k, lv in enumerate(hs.levels):
        table[lv] = k
    return table


@dataclass(frozen=True, eq=False)
class HaltingSamples:
    """Per-trajectory records of the nested halting times; -1 means not reached."""

    params: RimParams
    start: int
    config: SimulationConfig
    tau_levels: np.ndarray = field(repr=False)
    x_levels: np.ndarray = field(repr=False)
    tau_star: np.ndarray = field(repr=False)
    x_star: np.ndarray = field(repr=False)
    tau_g: np.ndarray = field(repr=False)

    @property
    def reached(self) -> np.ndarray:
        return self.tau_star >= 0

    @property
    def unresolved(self) -> float:
        """Fraction neither absorbed nor stopped by the horizon."""
        return float(np.mean((self.tau_star < 0) & (self.tau_g < 0)))

    def level_offsets(self, k: int) -> np.ndarray:
        """``X_{tau(k)} - S_0`` (mod 4**n) over trajectories that reached level k."""
        ok = self.tau_levels[:, k] >= 0
        return (self.x_levels[ok, k] - self.x_levels[ok, 0]) % self.params.size


def rim_halting_csqst(params: RimParams, start: int, config: SimulationConfig) -> HaltingSamples:
    """Simulate the nested halting times and ``tau_* = tau(2n - 1) + 1`` from ``start``."""
    m = params.size
    if not 0 <= start < m:
        raise ValueError("start must be a ring state")
    tr = _kernels.Transitions(rim_matrix(params))
    lookup = level_lookup(params.n)
    top = 2 * params.n - 1
    use_numba = _kernels.backend() == "numba"
    parts = [[] for _ in range(5)]
    for first in range(0, config.trajectories, config.block):
        count = min(config.block, config.trajectories - first)
        out = _kernels.rim_walk(tr, start, m, lookup, top, config.horizon,
                                config.seed, first, count, use_numba)
        for p, arr in zip(parts, out):
            p.append(arr)
    tau_lv, x_lv, tau_star, x_star, tau_g = (np.concatenate(p) for p in parts)
    samples = HaltingSamples(params, start, config, tau_lv, x_lv, tau_star, x_star, tau_g)
    if samples.unresolved > 0.01:
        raise SimulationError(
            f"{samples.unresolved:.2%} of rim trajectories unresolved at horizon {config.horizon}"
        )
    return samples
