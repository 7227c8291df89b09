"""Tracking-process construction of conditionally-strong quasi-stationary times.

The tracking process runs on two copies of the state space. Layer 0 follows P
but, on arriving at z at time t, jumps to layer 1 with probability J(t, z);
arrivals in G always jump. The first jump time tau_1 is a CSQST. Layer 1 is
never stored: once there, the law is ``mu_star`` times a scalar and evolves in
closed form, so only the layer-0 sub-probability vectors are propagated.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import MarkovChain
from .errors import ResidualError
from .spectral import SeparationTable, SpectralTriple, lam_power, separation_table

# m(t-1) - m(t) at or below this is treated as 0/0 := 0 in the jump law
FLAT_STEP = 1e-15
CONSERVATION_TOL = 1e-10
# pmf values below this are rounding residue; flux proportionality is not checked there
FLUX_FLOOR = 1e-13
# P(tau_1 > t) at or below this makes the ephemeral measure numerically undefined
EPHEMERAL_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ControlFunction:
    """Values m(t) for t = -1..horizon, stored at index t + 1."""

    values: np.ndarray = field(repr=False)
    table: SeparationTable = field(repr=False)
    minimal: bool

    @property
    def horizon(self) -> int:
        return len(self.values) - 2

    def at(self, t: int) -> float:
        return float(self.values[t + 1])

    def steps(self) -> np.ndarray:
        """``m(t-1) - m(t)`` for t = 0..horizon."""
        return self.values[:-1] - self.values[1:]


@dataclass(frozen=True, eq=False)
class TrackingTable:
    phi: np.ndarray = field(repr=False)
    entry: np.ndarray = field(repr=False)
    tau1_pmf: np.ndarray = field(repr=False)
    tau1_survival: np.ndarray = field(repr=False)
    absorbed: np.ndarray = field(repr=False)
    control: ControlFunction = field(repr=False)
    closed_form_pmf: np.ndarray = field(repr=False)
    conservation_residual: float
    closed_form_residual: float

    @property
    def horizon(self) -> int:
        return len(self.tau1_pmf) - 1


@dataclass(frozen=True, eq=False)
class CsqstDistribution:
    """Law of a CSQST on the event that it precedes absorption.

    ``pmf[t] = P(tau_* = t < tau_G)``; ``cumulative[t] = P(tau_* <= t < tau_G)``.
    ``defect`` is ``1 - sum(pmf)``, an upper estimate of ``P(tau_G < tau_*)``
    that overshoots by at most ``unresolved = P(tau_{*,G} > horizon)``.
    """

    pmf: np.ndarray = field(repr=False)
    cumulative: np.ndarray = field(repr=False)
    defect: float
    unresolved: float
    minimality_residual: float
    control: ControlFunction = field(repr=False)


# ------------------------------------------------------------ control functions


def control_minimal(table: SeparationTable) -> ControlFunction:
    """``m = s`` (the tilted separation), with ``m(-1) = 1``.

    Rounding can leave the computed separation a hair above its previous
    value; a running minimum restores monotonicity at that noise level.
    """
    values = np.minimum.accumulate(table.sep_ext)
    values.setflags(write=False)
    return ControlFunction(values, table, minimal=True)


def control_from_values(table: SeparationTable, values, tol: float = 1e-12) -> ControlFunction:
    """Wrap user-supplied m(-1..horizon) after checking it dominates the separation."""
    values = np.asarray(values, dtype=np.float64).copy()
    if values.shape != (table.horizon + 2,):
        raise ValueError(f"control needs {table.horizon + 2} values (t = -1..horizon)")
    if values[0] != 1.0:
        raise ValueError("control function must satisfy m(-1) = 1")
    if np.any(np.diff(values) > tol):
        raise ValueError("control function must be nonincreasing")
    if np.any(values[1:] < table.sep - tol):
        raise ValueError("control function must dominate the separation")
    if values.min() < -tol or values.max() > 1.0 + tol:
        raise ValueError("control function must take values in [0, 1]")
    values = np.clip(np.minimum.accumulate(values), 0.0, 1.0)
    values.setflags(write=False)
    minimal = bool(np.allclose(values, control_minimal(table).values, rtol=0, atol=tol))
    return ControlFunction(values, table, minimal=minimal)


def control_geometric_floor(table: SeparationTable, c: float, rho: float) -> ControlFunction:
    """Non-minimal control ``m(t) = max(s(t), c * rho^t)`` capped at one."""
    t = np.arange(table.horizon + 1)
    floor = np.minimum(c * rho**t, 1.0)
    m = np.maximum(control_minimal(table).values[1:], floor)
    return control_from_values(table, np.concatenate([[1.0], m]))


# ------------------------------------------------------------- jump law


def _jump_rows(control: ControlFunction, t0: int = 0, t1: int | None = None):
    """Jump and stay probabilities on A for times t0..t1 (inclusive).

    Stay is evaluated as ``(m(t) - s(t,z)) / (m(t-1) - s(t,z))`` rather than
    ``1 - J``; the two agree up to rounding but the former keeps relative
    precision when the jump probability is close to one.
    """
    table = control.table
    t1 = table.horizon if t1 is None else t1
    m = control.values
    prev = m[t0:t1 + 1][:, None]
    cur = m[t0 + 1:t1 + 2][:, None]
    s = table.sep_pointwise[t0:t1 + 1]
    num = prev - cur
    den = prev - s
    flat = np.broadcast_to(num <= FLAT_STEP, den.shape)
    if np.any(~flat & (den <= 0.0)):
        raise ResidualError("control function does not dominate the pointwise separation")
    with np.errstate(divide="ignore", invalid="ignore"):
        jump = np.where(flat, 0.0, num / den)
        stay = np.where(flat, 1.0, (cur - s) / den)
    return np.clip(jump, 0.0, 1.0), np.clip(stay, 0.0, 1.0)


def jump_probabilities(control: ControlFunction, table: SeparationTable, t: int) -> np.ndarray:
    """J(t, .) over all states; identically one on G."""
    if control.table is not table:
        raise ValueError("control function was built for a different separation table")
    if not 0 <= t <= table.horizon:
        raise ValueError("t outside the table horizon")
    jump, _ = _jump_rows(control, t, t)
    out = np.ones(table.n_states)
    out[table.index] = jump[0]
    return out


# ------------------------------------------------------------- tracking process


def tracking_recursion(
    chain: MarkovChain,
    triple: SpectralTriple,
    alpha,
    control: ControlFunction,
    horizon: int | None = None,
) -> TrackingTable:
    """Exact layer-0 evolution of the tracking process up to ``horizon``.

    Also evaluates the closed form ``lam^(t+delta) (m(t-1) - m(t))`` for the
    law of tau_1 on {tau_1 < tau_G}, independently of the recursion.
    """
    table = control.table
    horizon = table.horizon if horizon is None else horizon
    if horizon > table.horizon:
        raise ValueError("horizon exceeds the control function's table")
    a = triple.on_transient(alpha)
    if not np.allclose(a, table.alpha, rtol=0, atol=1e-15):
        raise ValueError("alpha differs from the one the control function was built for")

    A, G = triple.index, chain.goal
    M = triple.block
    to_goal = chain.P[np.ix_(A, G)]
    jump, stay = _jump_rows(control, 0, horizon)

    k = len(A)
    phi = np.empty((horizon + 1, k))
    entry = np.empty((horizon + 1, k))
    absorbed = np.zeros((horizon + 1, len(G)))
    phi[0] = a * stay[0]
    entry[0] = a * jump[0]
    worst = abs(phi[0].sum() + entry[0].sum() - 1.0)
    for t in range(horizon):
        pre = phi[t] @ M
        absorbed[t + 1] = phi[t] @ to_goal
        entry[t + 1] = pre * jump[t + 1]
        phi[t + 1] = pre * stay[t + 1]
        gap = abs(phi[t + 1].sum() + entry[t + 1].sum() + absorbed[t + 1].sum() - phi[t].sum())
        worst = max(worst, gap)
    if worst > CONSERVATION_TOL:
        raise ResidualError(f"tracking recursion lost mass: {worst:.3e}")

    pmf = entry.sum(axis=1)
    steps = control.steps()[: horizon + 1]
    closed = lam_power(triple.lam, np.arange(horizon + 1)) * table.shift_factor * steps
    for arr in (phi, entry, absorbed, pmf, closed):
        arr.setflags(write=False)
    return TrackingTable(
        phi=phi,
        entry=entry,
        tau1_pmf=pmf,
        tau1_survival=phi.sum(axis=1),
        absorbed=absorbed,
        control=control,
        closed_form_pmf=closed,
        conservation_residual=float(worst),
        closed_form_residual=float(np.abs(pmf - closed).max()),
    )


def csqst_from_control(triple: SpectralTriple, control: ControlFunction) -> CsqstDistribution:
    """Closed-form law of the CSQST built from any control function."""
    table = control.table
    t = np.arange(table.horizon + 1)
    scale = lam_power(triple.lam, t) * table.shift_factor
    pmf = scale * control.steps()
    cumulative = scale * (1.0 - control.values[1:])
    # remaining layer-0 mass at the horizon, in closed form
    h = table.horizon
    gap = control.values[-1] - table.sep_pointwise[h]
    unresolved = float(scale[h] * np.clip(triple.mu_star @ gap, 0.0, None))
    # sum_{u<=t} lam^(t-u) pmf(u), accumulated independently of `cumulative`
    acc = np.empty_like(pmf)
    run = 0.0
    for i, p in enumerate(pmf):
        run = triple.lam * run + p
        acc[i] = run
    bound = scale * (1.0 - table.sep)
    residual = float(np.abs(acc - bound).max()) if control.minimal else 0.0
    for arr in (pmf, cumulative):
        arr.setflags(write=False)
    return CsqstDistribution(
        pmf=pmf,
        cumulative=cumulative,
        defect=float(1.0 - pmf.sum()),
        unresolved=unresolved,
        minimality_residual=residual,
        control=control,
    )


def minimal_csqst(table: SeparationTable, triple: SpectralTriple) -> CsqstDistribution:
    """Law of the minimal CSQST: ``pmf(t) = lam^(t+delta) (s(t-1) - s(t))``."""
    return csqst_from_control(triple, control_minimal(table))


def prop_p1_gap(triple: SpectralTriple, control: ControlFunction) -> np.ndarray:
    """``lam^(t+delta)(1 - s(t)) - sum_{u<=t} lam^(t-u) pmf(u)``; nonnegative for any control."""
    dist = csqst_from_control(triple, control)
    table = control.table
    scale = lam_power(triple.lam, np.arange(table.horizon + 1)) * table.shift_factor
    acc = np.empty_like(dist.pmf)
    run = 0.0
    for i, p in enumerate(dist.pmf):
        run = triple.lam * run + p
        acc[i] = run
    return scale * (1.0 - table.sep) - acc


def entry_flux_deviation(tracking: TrackingTable, triple: SpectralTriple) -> float:
    """Worst relative deviation of the layer-1 entry law from ``mu_star``.

    Only times where the entry mass exceeds ``FLUX_FLOOR`` are inspected.
    """
    worst = 0.0
    for t in np.flatnonzero(tracking.tau1_pmf > FLUX_FLOOR):
        law = tracking.entry[t] / tracking.tau1_pmf[t]
        worst = max(worst, float(np.abs(law / triple.mu_star - 1.0).max()))
    return worst


def ephemeral(tracking: TrackingTable, t: int) -> np.ndarray:
    """Layer-0 law at time t given tau_1 > t, as a vector on A."""
    mass = tracking.tau1_survival[t]
    if not mass > 0.0:
        raise ValueError(f"no layer-0 mass survives to time {t}")
    return tracking.phi[t] / mass


@dataclass(frozen=True)
class SemigroupReport:
    t: int
    u: int
    degenerate: bool
    ephemeral_residual: float
    survival_residual: float
    jump_residual: float

    @property
    def max_residual(self) -> float:
        return max(self.ephemeral_residual, self.survival_residual, self.jump_residual)


def _minimal_tracking(chain, triple, alpha, horizon):
    table = separation_table(chain, triple, alpha, horizon)
    control = control_minimal(table)
    return table, control, tracking_recursion(chain, triple, table.alpha, control)


def verify_semigroup(
    chain: MarkovChain,
    triple: SpectralTriple,
    alpha,
    t: int,
    u: int,
    control: ControlFunction | None = None,
) -> SemigroupReport:
    """Residuals of the restart identities for the ephemeral measure.

    Compares the tracking process from alpha at time t + u with a fresh
    tracking process started at the ephemeral measure Phi_t:
    ``Phi_{t+u} = Phi_u^{Phi_t}``, ``P(tau_1 > t+u) = P(tau_1 > t) P(tau_1^{Phi_t} > u)``
    and ``J(t+u, .) = J^{Phi_t}(u, .)``. These identities are only established
    for the minimal control, so any other control is rejected.
    """
    if control is not None and not control.minimal:
        raise ValueError("semigroup identities are only checked for the minimal control")
    if t < 0 or u < 0:
        raise ValueError("t and u must be nonnegative")
    table, ctrl, track = _minimal_tracking(chain, triple, alpha, t + u)
    surv_t = track.tau1_survival[t]
    if surv_t <= EPHEMERAL_FLOOR:
        return SemigroupReport(t, u, True, 0.0, 0.0, 0.0)

    phi_t = ephemeral(track, t)
    table2, ctrl2, track2 = _minimal_tracking(chain, triple, phi_t, u)
    r_surv = abs(track.tau1_survival[t + u] - surv_t * track2.tau1_survival[u])
    r_eph = 0.0
    if track.tau1_survival[t + u] > EPHEMERAL_FLOOR:
        r_eph = float(np.abs(ephemeral(track, t + u) - ephemeral(track2, u)).max())
    # J only acts on the layer-0 mass about to jump at t + u; elsewhere it is
    # a ratio of rounding errors and carries no information
    pre = table.alpha if t + u == 0 else track.phi[t + u - 1] @ triple.block
    live = np.ones(table.n_states, dtype=bool)
    live[table.index] = pre > EPHEMERAL_FLOOR * max(pre.sum(), EPHEMERAL_FLOOR)
    j1 = jump_probabilities(ctrl, table, t + u)
    j2 = jump_probabilities(ctrl2, table2, u)
    return SemigroupReport(
        t, u, False, r_eph, float(r_surv), float(np.abs(j1 - j2)[live].max())
    )
