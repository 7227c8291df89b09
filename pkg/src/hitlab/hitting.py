"""Representation of the hitting-time law and the quantities built on it.

Throughout, ``f(t) = P(tau_{*,G} > t)`` is the tail of the strong
metastability time for the minimal CSQST. Three routes to it are kept apart
so they can check each other:

* survival minus leading term (full-chain propagation),
* layer-0 mass of the tracking recursion,
* ``lam^t (c s(t) + sum_y e_t(y))`` from the separation deviation vector,
  which needs no subtraction of two survival-sized numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import MarkovChain, absorption_profile, survival
from .csqst import TrackingTable, control_minimal, tracking_recursion
from .errors import ConvergenceError, ResidualError
from .spectral import (
    SeparationTable,
    SpectralTriple,
    hitting_measure,
    lam_power,
    separation_table,
)

NEGATIVE_TOL = 1e-12
HORIZON_TARGET = 1e-12
HORIZON_CAP = 10**5
# exact per-start remainders cost O(|A|^3) per step; above this size the
# default horizon uses the cheaper bound P(tau_{*,G} > t) <= P(tau_G > t)
DIRAC_EXACT_MAX = 256


def scaled_remainder(table: SeparationTable) -> np.ndarray:
    """``lam^(-t-delta) P(tau_{*,G} > t)`` for t = 0..horizon.

    Equals ``s(t) + sum_y e_t(y) / c`` where ``e_t`` is the deviation of
    ``w_t`` from ``c mu_star``. Clipped below at zero.
    """
    r = table.sep + table.deviation.sum(axis=1) / table.shift_factor
    return np.maximum(r, 0.0)


def metastability_survival(
    chain: MarkovChain, triple: SpectralTriple, table: SeparationTable, horizon: int | None = None
) -> np.ndarray:
    """``P(tau_{*,G} > t)`` as survival minus the leading term."""
    horizon = table.horizon if horizon is None else horizon
    if horizon > table.horizon:
        raise ValueError("horizon exceeds the separation table")
    surv = survival(chain, triple.embed(table.alpha), horizon)
    rem = surv - table.leading()[: horizon + 1]
    if rem.min() < -NEGATIVE_TOL:
        raise ResidualError(
            f"negative metastability survival {rem.min():.3e}; survival and separation disagree"
        )
    return np.clip(rem, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class RepresentationReport:
    survival: np.ndarray = field(repr=False)
    leading: np.ndarray = field(repr=False)
    remainder: np.ndarray = field(repr=False)
    remainder_formula: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)
    table: SeparationTable = field(repr=False)
    tracking: TrackingTable = field(repr=False)

    @property
    def horizon(self) -> int:
        return len(self.survival) - 1

    @property
    def max_residual(self) -> float:
        return float(self.residual.max())

    @property
    def route_gap(self) -> float:
        """Largest disagreement between the tracking and formula remainders."""
        return float(np.abs(self.remainder - self.remainder_formula).max())


def representation(
    chain: MarkovChain, triple: SpectralTriple, alpha, horizon: int
) -> RepresentationReport:
    """Survival, leading term and remainder, each from its own computation.

    ``residual = |survival - leading - remainder|`` uses the tracking-process
    remainder, so it does not vanish by construction.
    """
    table = separation_table(chain, triple, alpha, horizon)
    tracking = tracking_recursion(chain, triple, table.alpha, control_minimal(table))
    surv = survival(chain, triple.embed(table.alpha), horizon)
    lead = table.leading()
    rem = tracking.tau1_survival
    formula = metastability_survival(chain, triple, table)
    for arr in (surv, lead, formula):
        arr.setflags(write=False)
    return RepresentationReport(
        survival=surv,
        leading=lead,
        remainder=rem,
        remainder_formula=formula,
        residual=np.abs(surv - lead - rem),
        table=table,
        tracking=tracking,
    )


@dataclass(frozen=True, eq=False)
class ExitDecomposition:
    """Per-goal-state split of the exit law; arrays follow ``chain.absorbing``."""

    exact: np.ndarray
    from_layer0: np.ndarray
    from_quasi_stationary: np.ndarray
    omega: np.ndarray
    p_escape_first: float
    unresolved: float

    @property
    def residual(self) -> np.ndarray:
        return np.abs(self.exact - self.from_layer0 - self.from_quasi_stationary)


def exit_decomposition(
    chain: MarkovChain, triple: SpectralTriple, alpha, tracking: TrackingTable
) -> ExitDecomposition:
    """Exit law = mass absorbed before tau_* plus omega times ``P(tau_* < tau_G)``.

    ``unresolved`` is the layer-0 mass still alive at the tracking horizon;
    the residual can be at most that large from truncation alone.
    """
    a = triple.on_transient(alpha)
    exact = absorption_profile(chain, triple.embed(a))
    omega = hitting_measure(chain, triple)
    p_star = float(tracking.tau1_pmf.sum())
    return ExitDecomposition(
        exact=exact,
        from_layer0=tracking.absorbed.sum(axis=0),
        from_quasi_stationary=omega * p_star,
        omega=omega,
        p_escape_first=p_star,
        unresolved=float(tracking.tau1_survival[-1]),
    )


# ------------------------------------------------------------ Dirac starts


@dataclass(frozen=True, eq=False)
class DiracProfiles:
    """Separation and remainder for every Dirac start, rows t, columns A."""

    sep: np.ndarray = field(repr=False)
    scaled: np.ndarray = field(repr=False)
    remainder: np.ndarray = field(repr=False)

    @property
    def horizon(self) -> int:
        return len(self.sep) - 1

    @property
    def sup_remainder(self) -> np.ndarray:
        """``sup_x P(tau^x_{*,G} > t)``."""
        return self.remainder.max(axis=1)

    @property
    def sup_sep(self) -> np.ndarray:
        return self.sep.max(axis=1)


def _dirac_steps(triple: SpectralTriple):
    """Yield ``(t, E_t)`` with ``E_0 = I - gamma mu_star^T`` and ``E_{t+1} = E_t M / lam``."""
    M = triple.block / triple.lam
    E = np.eye(triple.size) - np.outer(triple.gamma, triple.mu_star)
    t = 0
    while True:
        yield t, E
        E = E @ M
        t += 1


def _dirac_row(E: np.ndarray, triple: SpectralTriple):
    g, mu = triple.gamma, triple.mu_star
    sep = np.clip((-E / mu[None, :]).max(axis=1) / g, 0.0, 1.0)
    scaled = np.maximum(sep + E.sum(axis=1) / g, 0.0)
    return sep, scaled


def dirac_profiles(triple: SpectralTriple, horizon: int) -> DiracProfiles:
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    k = triple.size
    sep = np.empty((horizon + 1, k))
    scaled = np.empty((horizon + 1, k))
    for t, E in _dirac_steps(triple):
        sep[t], scaled[t] = _dirac_row(E, triple)
        if t == horizon:
            break
    if not (np.all(np.isfinite(sep)) and np.all(np.isfinite(scaled))):
        raise ResidualError("non-finite values in the per-start separation recursion")
    weight = lam_power(triple.lam, np.arange(horizon + 1))[:, None] * triple.gamma[None, :]
    remainder = np.minimum(weight * scaled, 1.0)
    for arr in (sep, scaled, remainder):
        arr.setflags(write=False)
    return DiracProfiles(sep, scaled, remainder)


def default_horizon(
    triple: SpectralTriple,
    alpha=None,
    target: float = HORIZON_TARGET,
    cap: int = HORIZON_CAP,
) -> int:
    """Smallest t where the separation and ``sup_x P(tau^x_{*,G} > t)`` are below ``target``.

    Returns ``cap`` if the criteria are not met by then.
    """
    lam = triple.lam
    M = triple.block / lam
    if alpha is not None:
        a = triple.on_transient(alpha)
        c = float(a @ triple.gamma)
        dev = a - c * triple.mu_star
    else:
        c, dev = 1.0, np.zeros(triple.size)
    exact = triple.size <= DIRAC_EXACT_MAX
    steps = _dirac_steps(triple) if exact else None
    tail = np.ones(triple.size)
    for t in range(cap + 1):
        s_alpha = max(float((-dev / (c * triple.mu_star)).max()), 0.0)
        if exact:
            _, E = next(steps)
            _, scaled = _dirac_row(E, triple)
            sup_rem = float((math.exp(t * math.log(lam)) * triple.gamma * scaled).max())
        else:
            sup_rem = float(tail.max())
        if s_alpha < target and sup_rem < target:
            return t
        dev = dev @ M
        if not exact:
            tail = triple.block @ tail
    return cap


@dataclass(frozen=True)
class MeanMetastabilityTime:
    """R with a certified bound on the part of the series beyond the horizon.

    The true value lies in ``[value, value + tail_bound]``.
    """

    value: float
    tail_bound: float
    horizon: int
    argmax: int
    block_length: int


def mean_metastability_time(
    triple: SpectralTriple, horizon: int, profiles: DiracProfiles | None = None
) -> MeanMetastabilityTime:
    """``R = max_x sum_t P(tau^x_{*,G} > t)``.

    By submultiplicativity of ``f(t) = sup_x P(tau^x_{*,G} > t)``,
    ``f(H + j t0 + r) <= f(H) f(t0)^j f(r)``, so the tail beyond H is at most
    ``f(H) F(t0) / (1 - f(t0))`` with ``F(t0) = f(1) + ... + f(t0)``;
    t0 is chosen to make this smallest.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if profiles is None or profiles.horizon < horizon:
        profiles = dirac_profiles(triple, horizon)
    rem = profiles.remainder[: horizon + 1]
    sums = rem.sum(axis=0)
    f = rem.max(axis=1)
    if f[horizon] == 0.0:
        tail, best_t0 = 0.0, 0
    else:
        F = np.cumsum(f[1:])
        q = f[1:]
        ok = q < 1.0
        if not ok.any():
            raise ConvergenceError(
                "no block length with sup survival below one; increase the horizon",
                residual=float(f[horizon]),
            )
        with np.errstate(divide="ignore"):
            score = np.where(ok, F / (1.0 - q), np.inf)
        i = int(np.argmin(score))
        tail, best_t0 = float(f[horizon] * score[i]), i + 1
    x = int(np.argmax(sums))
    return MeanMetastabilityTime(float(sums[x]), tail, horizon, x, best_t0)


def relaxation_sanity(lam: float) -> None:
    """Check ``e^(-1/lam) <= lam^T <= e^(-1)`` for ``T = 1 / (1 - lam)``."""
    T = 1.0 / (1.0 - lam)
    lt = math.exp(T * math.log(lam))
    slack = 1e-15
    if not (math.exp(-1.0 / lam) - slack <= lt <= math.exp(-1.0) + slack):
        raise ResidualError(f"lam^T = {lt!r} outside [e^(-1/lam), e^(-1)]")


@dataclass(frozen=True)
class MetastabilityProfile:
    R: float
    T: float
    rate_a: float
    ratio: float

    @property
    def hypothesis(self) -> bool:
        return self.ratio < 1.0


def metastability_rate(R: float, T: float, lam: float) -> MetastabilityProfile:
    """Solve ``R / T = lam^T e^(-a)`` for a; ``a = inf`` when R = 0."""
    if R < 0:
        raise ValueError("R must be nonnegative")
    log_lt = T * math.log(lam)
    ratio = R / (T * math.exp(log_lt)) if R > 0 else 0.0
    a = math.inf if R == 0 else -(math.log(R) - math.log(T) - log_lt)
    return MetastabilityProfile(R=R, T=T, rate_a=a, ratio=ratio)


@dataclass(frozen=True)
class BoundRow:
    n: int
    t: int
    deviation: float
    lower_ingredient: float
    upper_ingredient: float
    display_bound: float
    proof_upper: float
    proof_lower: float

    @property
    def holds(self) -> bool:
        return abs(self.deviation) < self.display_bound

    @property
    def proof_holds(self) -> bool:
        return self.proof_lower <= self.deviation <= self.proof_upper


def exponential_bound_check(
    chain: MarkovChain,
    triple: SpectralTriple,
    alpha,
    profile: MetastabilityProfile,
    n_max: int = 10,
) -> list[BoundRow]:
    """Compare ``P(tau_G > t) / lam^(t+delta) - 1`` with the exponential bound.

    Each n is evaluated at ``floor(nT)`` and ``ceil(nT)`` (one row if equal).
    The deviation comes from exact survival; the two ingredients ``-s(t)`` and
    ``lam^(-t-delta) P(tau_{*,G} > t)`` come from the separation table.
    An empty list means the hypothesis (``a > 0``) fails and nothing is checked.
    """
    if not profile.hypothesis:
        return []
    relaxation_sanity(triple.lam)
    lam, T, a = triple.lam, profile.T, profile.rate_a
    times = sorted({(n, t) for n in range(1, n_max + 1) for t in (math.floor(n * T), math.ceil(n * T))})
    t_max = times[-1][1]
    table = separation_table(chain, triple, alpha, t_max)
    surv = survival(chain, triple.embed(table.alpha), t_max)
    scaled = scaled_remainder(table)
    c, log_lam = table.shift_factor, math.log(lam)
    lam_T = math.exp(T * log_lam)
    rows = []
    for n, t in times:
        dev = surv[t] * math.exp(-t * log_lam) / c - 1.0
        if math.isinf(a):
            display = proof_up = 0.0
            proof_lo = 0.0
        else:
            e = math.exp(-a * n)
            display = e / c * math.exp(1.0 / lam) / (1.0 - math.exp(-a))
            proof_up = e / c
            proof_lo = -e / c / lam_T / (1.0 - math.exp(-a))
        rows.append(
            BoundRow(n, t, dev, -float(table.sep[t]), float(scaled[t]), display, proof_up, proof_lo)
        )
    return rows


def bound_holds(row: BoundRow, tol: float = 1e-12) -> bool:
    """Display bound with an absolute floor ``tol`` for the degenerate ``a = inf`` case."""
    if row.display_bound == 0.0:
        return abs(row.deviation) <= tol
    return row.holds


def lower_chain_slack(
    table: SeparationTable, lam: float, t_max: int = 30, literal: bool = False
) -> np.ndarray:
    """Slack of ``s(t) <= r(t) / lam + (1-lam)/lam * sum_{u>t} r(u)`` for t <= t_max.

    ``r(u) = lam^(-u-delta) P(tau_{*,G} > u)``. The first term comes from
    summing ``lam^(-u-delta) P(tau_{*,G} = u)`` over u > t by parts, which
    leaves ``lam^(-t-1-delta) P(tau_{*,G} > t)``. ``literal=True`` drops the
    1/lam on that term; the resulting inequality is false in general (the rim
    from a uniform start violates it at t = 0).

    The sum is truncated at the table horizon; every term is nonnegative so
    truncation only shrinks the right-hand side and a nonnegative slack
    remains a valid certificate.
    """
    if t_max >= table.horizon:
        raise ValueError("table horizon must exceed t_max")
    r = scaled_remainder(table)
    tail = np.cumsum(r[::-1])[::-1]  # tail[u] = sum_{v >= u} r(v)
    t = np.arange(t_max + 1)
    head = r[t] if literal else r[t] / lam
    rhs = head + (1.0 - lam) / lam * tail[t + 1]
    return rhs - table.sep[t]


def submultiplicativity_slack(profiles: DiracProfiles, grid: int = 50) -> float:
    """``min over 1 <= u, v <= grid`` of ``f(u) f(v) - f(u+v)``."""
    if profiles.horizon < 2 * grid:
        raise ValueError("profiles must reach twice the grid size")
    f = profiles.sup_remainder
    u = np.arange(1, grid + 1)
    prod = f[u][:, None] * f[u][None, :]
    return float((prod - f[u[:, None] + u[None, :]]).min())


@dataclass(frozen=True)
class Basin:
    members: tuple[int, ...]
    time: int
    gamma_min: float | None

    @property
    def bound_holds(self) -> bool:
        """Every Dirac start in the basin has ``gamma(x) = lam^delta >= 1/4``."""
        return self.gamma_min is None or self.gamma_min >= 0.25


def basin(triple: SpectralTriple, R: float) -> Basin:
    """States x in A with ``P(tau^x_G > 2 ceil(R)) > 3/4``; members are positions in A."""
    t = 2 * math.ceil(R)
    tail = np.ones(triple.size)
    for _ in range(t):
        tail = triple.block @ tail
    members = tuple(int(i) for i in np.flatnonzero(tail > 0.75))
    gmin = float(triple.gamma[list(members)].min()) if members else None
    return Basin(members, t, gmin)
