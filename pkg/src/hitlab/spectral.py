"""Perron data of the transient block and separation from quasi-stationarity.

Conventions: vectors on A are indexed like ``SubChain.index``; ``lam`` is the
spectral radius of [P]_A, ``mu_star`` its left Perron vector (sums to one) and
``gamma`` its right Perron vector scaled so that ``mu_star @ gamma == 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import MarkovChain, SubChain, STOCHASTIC_TOL
from .errors import ConvergenceError, ResidualError

POWER_TOL = 1e-13
POWER_MAX_ITER = 10**6
EIGEN_RESIDUAL_TOL = 1e-10
# LAPACK seeding is skipped above this size; plain power iteration from uniform
LAPACK_SEED_MAX = 1500


@dataclass(frozen=True, eq=False)
class SpectralTriple:
    lam: float
    mu_star: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    index: np.ndarray = field(repr=False)
    n_states: int
    block: np.ndarray = field(repr=False)
    residual_left: float = 0.0
    residual_right: float = 0.0
    iterations: int = 0

    @property
    def size(self) -> int:
        return len(self.index)

    @property
    def relaxation_time(self) -> float:
        """Mean absorption time from quasi-stationarity, ``1 / (1 - lam)``."""
        return 1.0 / (1.0 - self.lam)

    def on_transient(self, alpha) -> np.ndarray:
        """Accept alpha over all states or over A; return its A part.

        Raises ``ValueError`` if alpha charges G.
        """
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape == (self.n_states,):
            mask = np.ones(self.n_states, dtype=bool)
            mask[self.index] = False
            if alpha[mask].sum() > STOCHASTIC_TOL:
                raise ValueError("alpha has mass in G; it must be supported in A")
            alpha = alpha[self.index]
        elif alpha.shape != (self.size,):
            raise ValueError(
                f"alpha must have length {self.n_states} (all states) or {self.size} (A)"
            )
        if alpha.min() < 0 or abs(alpha.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValueError("alpha is not a probability vector")
        return alpha

    def embed(self, v_on_a) -> np.ndarray:
        """Zero-pad a vector on A to the full state space."""
        full = np.zeros(self.n_states)
        full[self.index] = v_on_a
        return full


@dataclass(frozen=True, eq=False)
class LocalChain:
    P_tilde: np.ndarray = field(repr=False)
    nu: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class SeparationTable:
    """Separation of the tilted local chain, t = 0..horizon.

    ``deviation[t] = w[t] - shift_factor * mu_star`` is propagated directly so
    that pointwise separations ``-deviation / (shift_factor * mu_star)`` keep
    relative precision after they drop far below one.
    """

    alpha: np.ndarray = field(repr=False)
    horizon: int
    index: np.ndarray = field(repr=False)
    n_states: int
    lam: float
    shift_factor: float
    delta: float
    w: np.ndarray = field(repr=False)
    deviation: np.ndarray = field(repr=False)
    sep_pointwise: np.ndarray = field(repr=False)
    sep: np.ndarray = field(repr=False)

    def sep_at(self, t: int) -> float:
        """``s(t)``, with the convention ``s(-1) = 1``."""
        if t == -1:
            return 1.0
        return float(self.sep[t])

    @property
    def sep_ext(self) -> np.ndarray:
        """Separation series prefixed with ``s(-1) = 1``; index ``t + 1``."""
        return np.concatenate([[1.0], self.sep])

    def leading(self) -> np.ndarray:
        """``lam^(t + delta) * (1 - s(t))`` for every t in the table."""
        t = np.arange(self.horizon + 1)
        return lam_power(self.lam, t) * self.shift_factor * (1.0 - self.sep)


def lam_power(lam: float, t) -> np.ndarray:
    return np.exp(np.asarray(t, dtype=np.float64) * math.log(lam))


# ---------------------------------------------------------------- Perron data


def _perron_seed(M: np.ndarray, left: bool) -> np.ndarray:
    vals, vecs = np.linalg.eig(M.T if left else M)
    v = np.abs(vecs[:, np.argmax(vals.real)].real)
    return v / v.sum()


def _power(M: np.ndarray, v: np.ndarray, left: bool, tol: float, max_iter: int):
    diff = np.inf
    for it in range(1, max_iter + 1):
        nxt = v @ M if left else M @ v
        nxt /= nxt.sum()
        diff = np.abs(nxt - v).sum()
        v = nxt
        if diff <= tol:
            return v, it
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} steps", residual=float(diff)
    )


def principal_triple(
    sub: SubChain,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
) -> SpectralTriple:
    """Perron eigenvalue and eigenvectors of [P]_A by power iteration.

    Both iterations are seeded with the LAPACK Perron vector when the block is
    small enough, then iterated until successive L1-normalized iterates differ
    by at most ``tol``. Normalization: ``sum(mu_star) == 1`` first, then
    ``mu_star @ gamma == 1``.
    """
    M = sub.matrix
    k = M.shape[0]
    if k <= LAPACK_SEED_MAX:
        x0, y0 = _perron_seed(M, left=True), _perron_seed(M, left=False)
    else:
        x0 = y0 = np.full(k, 1.0 / k)
    x, it_l = _power(M, x0, True, tol, max_iter)
    y, it_r = _power(M, y0, False, tol, max_iter)
    if x.min() <= 0 or y.min() <= 0:
        raise ConvergenceError("Perron vectors are not strictly positive")

    lam = float((x @ M @ y) / (x @ y))
    if not 0.0 < lam < 1.0:
        raise ConvergenceError(f"Perron eigenvalue {lam!r} outside (0, 1)")
    mu = x / x.sum()
    gamma = y / (mu @ y)
    res_l = float(np.abs(mu @ M - lam * mu).sum())
    res_r = float(np.abs(M @ gamma - lam * gamma).max() / gamma.max())
    if res_l > EIGEN_RESIDUAL_TOL or res_r > EIGEN_RESIDUAL_TOL:
        raise ConvergenceError(
            "eigen-residual above tolerance", residual=max(res_l, res_r)
        )
    mu.setflags(write=False)
    gamma.setflags(write=False)
    return SpectralTriple(
        lam=lam,
        mu_star=mu,
        gamma=gamma,
        index=sub.index,
        n_states=sub.n_states,
        block=sub.matrix,
        residual_left=res_l,
        residual_right=res_r,
        iterations=max(it_l, it_r),
    )


def local_chain(sub: SubChain, triple: SpectralTriple) -> LocalChain:
    """Doob transform of [P]_A by gamma, and its invariant law nu = mu* gamma."""
    g = triple.gamma
    Pt = sub.matrix * g[None, :] / (g[:, None] * triple.lam)
    Pt /= Pt.sum(axis=1, keepdims=True)
    nu = triple.mu_star * g
    return LocalChain(Pt, nu / nu.sum())


def hitting_measure(chain: MarkovChain, triple: SpectralTriple) -> np.ndarray:
    """Entrance law into G from quasi-stationarity, over ``chain.absorbing``."""
    flow = triple.mu_star @ chain.P[np.ix_(triple.index, chain.goal)]
    return flow / (1.0 - triple.lam)


def time_shift(alpha, triple: SpectralTriple) -> tuple[float, float]:
    """``(alpha . gamma, log_lam(alpha . gamma))``."""
    a = triple.on_transient(alpha)
    c = float(a @ triple.gamma)
    return c, math.log(c) / math.log(triple.lam)


def tilt(alpha, triple: SpectralTriple) -> np.ndarray:
    a = triple.on_transient(alpha)
    v = a * triple.gamma
    return v / v.sum()


def separation_table(chain, triple: SpectralTriple, alpha, horizon: int) -> SeparationTable:
    """Tabulate ``w_t = mu_t^alpha / lam^t`` on A and the tilted separations.

    ``w`` obeys ``w_{t+1} = w_t [P]_A / lam``; since ``mu_star`` is a fixed
    point of that map the deviation from ``(alpha . gamma) mu_star`` obeys the
    same recursion and is what gets iterated.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if chain is not None and chain.n != triple.n_states:
        raise ValueError("chain and spectral triple disagree on the state count")
    a = triple.on_transient(alpha)
    c, delta = time_shift(a, triple)
    M = triple.block / triple.lam
    mu = triple.mu_star
    k = len(a)
    dev = np.empty((horizon + 1, k))
    dev[0] = a - c * mu
    for t in range(horizon):
        dev[t + 1] = dev[t] @ M
    if not np.all(np.isfinite(dev)):
        raise ResidualError("non-finite values in the separation recursion")
    w = dev + c * mu
    pointwise = -dev / (c * mu)
    sep = np.clip(pointwise.max(axis=1), 0.0, 1.0)
    for arr in (w, dev, pointwise, sep):
        arr.setflags(write=False)
    return SeparationTable(
        alpha=a,
        horizon=horizon,
        index=triple.index,
        n_states=triple.n_states,
        lam=triple.lam,
        shift_factor=c,
        delta=delta,
        w=w,
        deviation=dev,
        sep_pointwise=pointwise,
        sep=sep,
    )


def rough_bounds(table: SeparationTable, triple: SpectralTriple, t: int) -> tuple[float, float]:
    """Lower and upper estimates of ``P(tau_G > t)`` from the separation alone."""
    if not 0 <= t <= table.horizon:
        raise ValueError("t outside the table horizon")
    base = float(lam_power(table.lam, t)) * table.shift_factor
    s = float(table.sep[t])
    lower = base * (1.0 - s)
    upper = base * (1.0 + s * (1.0 / triple.gamma.min() - 1.0))
    return lower, upper
