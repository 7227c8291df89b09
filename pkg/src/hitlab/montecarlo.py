"""Seeded trajectory simulation and statistical comparison with exact values."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .chain import MarkovChain, check_distribution
from .csqst import ControlFunction, _jump_rows
from .errors import SimulationError
from .spectral import SeparationTable, SpectralTriple

MAX_CENSORED = 0.01
Z_POINTWISE = 3.0
Z_PER_STATE = 4.0
TV_FACTOR = 5.0


@dataclass(frozen=True)
class SimulationConfig:
    seed: int = 0
    trajectories: int = 100_000
    horizon: int = 1000
    block: int = 65_536

    def __post_init__(self):
        if self.trajectories < 1:
            raise ValueError("trajectories must be at least 1")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.block < 1:
            raise ValueError("block must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Per-trajectory records; -1 marks "did not happen before the horizon".

    ``tau1``/``x_tau1`` are the first jump of the tracking process, including
    the forced jump on arrival in G; they are all -1 for plain chain samples.
    ``snapshots[i, j]`` is the state of trajectory i at ``snapshot_times[j]``.
    """

    config: SimulationConfig
    backend: str
    tau_g: np.ndarray = field(repr=False)
    exit_state: np.ndarray = field(repr=False)
    tau1: np.ndarray = field(repr=False)
    x_tau1: np.ndarray = field(repr=False)
    snapshot_times: np.ndarray = field(repr=False)
    snapshots: np.ndarray = field(repr=False)
    tracking: bool = False

    @property
    def size(self) -> int:
        return len(self.tau_g)

    @property
    def censored(self) -> float:
        return float(np.mean(self.tau_g < 0))

    def survival(self, times) -> np.ndarray:
        """Empirical ``P(tau_G > t)``; censored trajectories count as surviving."""
        times = np.asarray(times)
        tg = np.where(self.tau_g < 0, np.iinfo(np.int64).max, self.tau_g)
        return (tg[None, :] > times[:, None]).mean(axis=1)

    def before_absorption(self) -> np.ndarray:
        """Mask of trajectories whose first jump happened strictly before absorption."""
        return (self.tau1 >= 0) & ((self.tau_g < 0) | (self.tau1 < self.tau_g))

    def summary(self, n_states: int, grid=None) -> dict:
        """Deterministic scalar summary used in reports."""
        grid = np.arange(0, min(self.config.horizon, 50) + 1, 5) if grid is None else np.asarray(grid)
        done = self.tau_g >= 0
        exit_freq = np.bincount(self.exit_state[done], minlength=n_states) / self.size
        out = {
            "trajectories": self.size,
            "seed": self.config.seed,
            "horizon": self.config.horizon,
            "censored_fraction": self.censored,
            "mean_tau_g": float(self.tau_g[done].mean()) if done.any() else None,
            "survival_grid": [int(t) for t in grid],
            "survival": [float(v) for v in self.survival(grid)],
            "exit_frequency": [float(v) for v in exit_freq],
        }
        if self.tracking:
            cond = self.before_absorption()
            out["p_tau1_before_absorption"] = float(cond.mean())
            out["mean_tau1_before_absorption"] = float(self.tau1[cond].mean()) if cond.any() else None
        return out

    def dump_csv(self, path, labels) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trajectory", "tau_g", "exit_state", "tau1", "x_tau1"])
            for i in range(self.size):
                w.writerow([
                    i,
                    int(self.tau_g[i]),
                    labels[self.exit_state[i]] if self.exit_state[i] >= 0 else "",
                    int(self.tau1[i]),
                    labels[self.x_tau1[i]] if self.x_tau1[i] >= 0 else "",
                ])


def _run_blocks(config: SimulationConfig, fn, n_out: int):
    parts = [[] for _ in range(n_out)]
    for first in range(0, config.trajectories, config.block):
        count = min(config.block, config.trajectories - first)
        for p, arr in zip(parts, fn(first, count)):
            p.append(arr)
    return [np.concatenate(p) for p in parts]


def _walk(chain, alpha, config, jump, snapshot_times, check_censoring):
    alpha = check_distribution(alpha, chain.n, "alpha")
    snap = np.asarray(sorted(snapshot_times or ()), dtype=np.int64)
    if snap.size and (snap.min() < 0 or snap.max() > config.horizon):
        raise ValueError("snapshot times must lie in [0, horizon]")
    tr = _kernels.Transitions(chain.P)
    support, cum = _kernels.start_table(alpha)
    goal = np.zeros(chain.n, dtype=np.bool_)
    goal[chain.goal] = True
    use_numba = _kernels.backend() == "numba"

    def run(first, count):
        return _kernels.walk(tr, support, cum, goal, jump, config.horizon, snap,
                             config.seed, first, count, use_numba)

    tau_g, exit_s, tau1, x1, snaps = _run_blocks(config, run, 5)
    samples = SampleSet(
        config=config,
        backend=_kernels.backend(),
        tau_g=tau_g,
        exit_state=exit_s,
        tau1=tau1,
        x_tau1=x1,
        snapshot_times=snap,
        snapshots=snaps,
        tracking=jump.shape[0] > 0,
    )
    if check_censoring and samples.censored > MAX_CENSORED:
        raise SimulationError(
            f"{samples.censored:.2%} of trajectories censored at horizon {config.horizon}; "
            "increase the horizon"
        )
    return samples


def sample_base(
    chain: MarkovChain, alpha, config: SimulationConfig, snapshot_times=None, check_censoring=True
) -> SampleSet:
    """Independent trajectories of the chain from alpha, stopped at G or the horizon."""
    jump = np.empty((0, chain.n))
    return _walk(chain, alpha, config, jump, snapshot_times, check_censoring)


def jump_table(chain: MarkovChain, control: ControlFunction) -> np.ndarray:
    """``J(t, z)`` over all states for t = 0..horizon; ones on G."""
    table = control.table
    jump, _ = _jump_rows(control)
    full = np.ones((table.horizon + 1, chain.n))
    full[:, table.index] = jump
    return full


def sample_tracking(
    chain: MarkovChain,
    triple: SpectralTriple,
    table: SeparationTable,
    control: ControlFunction,
    alpha,
    config: SimulationConfig,
    snapshot_times=None,
    check_censoring=True,
) -> SampleSet:
    """Trajectories of the tracking process; the chain path is shared with ``sample_base``.

    The jump law is only tabulated up to the table horizon, so a trajectory
    still on layer 0 after that time has ``tau1 = -1``.
    """
    if control.table is not table:
        raise ValueError("control function was built for a different separation table")
    a = triple.on_transient(alpha)
    if not np.allclose(a, table.alpha, rtol=0, atol=1e-15):
        raise ValueError("alpha differs from the separation table's initial law")
    return _walk(chain, triple.embed(a), config, jump_table(chain, control),
                 snapshot_times, check_censoring)


# ------------------------------------------------------------------ tests


@dataclass(frozen=True)
class LawTest:
    tv: float
    tv_threshold: float
    z: np.ndarray = field(repr=False)
    n: int
    z_threshold: float = Z_PER_STATE

    @property
    def max_z(self) -> float:
        return float(np.abs(self.z).max()) if self.z.size else 0.0

    @property
    def passed(self) -> bool:
        return self.n > 0 and self.tv <= self.tv_threshold and self.max_z <= self.z_threshold


def law_test(observed_states: np.ndarray, reference: np.ndarray, index: np.ndarray) -> LawTest:
    """Compare the empirical law of ``observed_states`` (full-chain indices) with ``reference`` on ``index``."""
    pos = np.full(int(max(index.max(), observed_states.max(initial=0))) + 1, -1)
    pos[index] = np.arange(len(index))
    local = pos[observed_states]
    if np.any(local < 0):
        raise ValueError("observed states fall outside the reference support")
    n = len(local)
    if n == 0:
        return LawTest(math.inf, 0.0, np.zeros(0), 0)
    freq = np.bincount(local, minlength=len(index)) / n
    sd = np.sqrt(reference * (1.0 - reference) / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, (freq - reference) / sd, np.where(freq == reference, 0.0, np.inf))
    tv = 0.5 * float(np.abs(freq - reference).sum())
    return LawTest(tv, TV_FACTOR * math.sqrt(len(index) / n), z, n)


def conditional_law_test(samples: SampleSet, triple: SpectralTriple) -> LawTest:
    """Law of ``X_{tau_1}`` on ``{tau_1 < tau_G}`` against ``mu_star``."""
    mask = samples.before_absorption()
    return law_test(samples.x_tau1[mask], np.asarray(triple.mu_star), triple.index)


def z_scores(estimate, exact, n: int) -> np.ndarray:
    """Binomial z-scores; cells with exact probability 0 or 1 score 0 if matched, inf otherwise."""
    estimate = np.asarray(estimate, float)
    exact = np.clip(np.asarray(exact, float), 0.0, 1.0)
    sd = np.sqrt(exact * (1.0 - exact) / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(sd > 0, (estimate - exact) / sd,
                        np.where(np.isclose(estimate, exact, rtol=0, atol=0), 0.0, np.inf))


def survival_z(samples: SampleSet, exact_survival: np.ndarray, grid) -> np.ndarray:
    grid = np.asarray(grid)
    return z_scores(samples.survival(grid), exact_survival[grid], samples.size)


def tau1_pmf_z(samples: SampleSet, closed_form: np.ndarray, times) -> np.ndarray:
    """Empirical ``P(tau_1 = t < tau_G)`` against the closed form."""
    times = np.asarray(times)
    mask = samples.before_absorption()
    est = np.array([np.mean(mask & (samples.tau1 == t)) for t in times])
    return z_scores(est, closed_form[times], samples.size)


def marginal_z(samples: SampleSet, exact: np.ndarray) -> np.ndarray:
    """Per-snapshot, per-state z-scores of the empirical marginal of X_t.

    ``exact[j]`` is the law at ``samples.snapshot_times[j]`` over all states.
    """
    n_states = exact.shape[1]
    out = np.empty_like(exact)
    for j in range(len(samples.snapshot_times)):
        col = samples.snapshots[:, j]
        if np.any(col < 0):
            raise SimulationError("snapshot recorded for a trajectory that was not simulated that far")
        freq = np.bincount(col, minlength=n_states) / samples.size
        out[j] = z_scores(freq, exact[j], samples.size)
    return out
