"""Analysis pipeline and report documents (JSON and CSV)."""
from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .chain import MarkovChain, SubChain, describe_alpha, dirac, restrict, uniform
from .csqst import (
    entry_flux_deviation,
    minimal_csqst,
    verify_semigroup,
)
from .hitting import (
    DiracProfiles,
    basin,
    bound_holds,
    default_horizon,
    dirac_profiles,
    exit_decomposition,
    exponential_bound_check,
    lower_chain_slack,
    mean_metastability_time,
    metastability_rate,
    representation,
    submultiplicativity_slack,
)
from .spectral import SpectralTriple, hitting_measure, local_chain, principal_triple, rough_bounds

DEFAULT_TOLERANCE = 1e-10
SLACK_TOL = 1e-12
SEMIGROUP_PAIRS = ((1, 1), (2, 3), (3, 4), (5, 5))

REPORT_SCHEMA = json.loads(
    resources.files("hitlab").joinpath("schemas/analysis_report.schema.json").read_text()
)


class Checks:
    """Ordered collection of named numeric checks."""

    def __init__(self):
        self.items: dict[str, dict] = {}

    def upper(self, name: str, value: float, limit: float) -> bool:
        ok = bool(value <= limit)
        self._put(name, value, limit, "<=", ok)
        return ok

    def lower(self, name: str, value: float, limit: float) -> bool:
        ok = bool(value >= limit)
        self._put(name, value, limit, ">=", ok)
        return ok

    def flag(self, name: str, ok: bool, value=None) -> bool:
        self._put(name, value, None, "true", bool(ok))
        return bool(ok)

    def _put(self, name, value, limit, relation, ok):
        if name in self.items:
            prev = self.items[name]
            worse = not ok or (prev["passed"] and _worse(value, prev["value"], relation))
            if not worse:
                return
        self.items[name] = {"value": value, "limit": limit, "relation": relation, "passed": ok}

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.items.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.items.items() if not v["passed"]]


def _worse(new, old, relation):
    if new is None or old is None:
        return False
    return new > old if relation == "<=" else new < old


def _finite(x):
    """Map non-finite floats to None so the document stays valid JSON; -0.0 becomes 0.0."""
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x + 0.0 if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _labeled(labels, values) -> dict:
    return {lab: float(v) for lab, v in zip(labels, values)}


# ------------------------------------------------------------------ pipeline


class Analysis:
    """Spectral data and per-start profiles shared by every initial law."""

    def __init__(self, chain: MarkovChain, horizon: int | None = None, tolerance: float = DEFAULT_TOLERANCE):
        self.chain = chain
        self.tolerance = tolerance
        self.sub: SubChain = restrict(chain)
        self.triple: SpectralTriple = principal_triple(self.sub)
        self.labels = chain.transient_labels
        self.horizon_override = horizon
        self.base_horizon = horizon if horizon is not None else default_horizon(self.triple)
        self._profiles: DiracProfiles | None = None

    def horizon_for(self, alpha) -> int:
        if self.horizon_override is not None:
            return self.horizon_override
        return max(self.base_horizon, default_horizon(self.triple, alpha))

    @property
    def profiles(self) -> DiracProfiles:
        if self._profiles is None:
            self._profiles = dirac_profiles(self.triple, max(self.base_horizon, 100))
        return self._profiles

    def metastability(self):
        H = self.profiles.horizon
        R = mean_metastability_time(self.triple, H, self.profiles)
        return R, metastability_rate(R.value, self.triple.relaxation_time, self.triple.lam)


def _spectral_section(an: Analysis, checks: Checks) -> dict:
    tr = an.triple
    checks.upper("eigen_residual_left", tr.residual_left, 1e-10)
    checks.upper("eigen_residual_right", tr.residual_right, 1e-10)
    lc = local_chain(an.sub, tr)
    checks.upper("local_chain_invariance", float(np.abs(lc.nu @ lc.P_tilde - lc.nu).sum()), 1e-10)
    omega = hitting_measure(an.chain, tr)
    checks.upper("hitting_measure_mass", abs(float(omega.sum()) - 1.0), 1e-10)
    return {
        "lambda": tr.lam,
        "relaxation_time": tr.relaxation_time,
        "iterations": tr.iterations,
        "residual_left": tr.residual_left,
        "residual_right": tr.residual_right,
        "mu_star": _labeled(an.labels, tr.mu_star),
        "gamma": _labeled(an.labels, tr.gamma),
        "omega": _labeled(an.chain.absorbing, omega),
    }


def analyze_alpha(an: Analysis, name: str, alpha, checks: Checks, series: dict | None = None) -> dict:
    chain, tr, tol = an.chain, an.triple, an.tolerance
    H = an.horizon_for(alpha)
    rep = representation(chain, tr, alpha, H)
    table, track = rep.table, rep.tracking
    dist = minimal_csqst(table, tr)
    checks.upper("representation_residual", rep.max_residual, tol)
    checks.upper("remainder_route_gap", rep.route_gap, tol)
    checks.upper("csqst_closed_form_residual", track.closed_form_residual, tol)
    checks.upper("csqst_conservation", track.conservation_residual, tol)
    checks.upper("csqst_minimality_residual", dist.minimality_residual, tol)
    flux = entry_flux_deviation(track, tr)
    checks.upper("csqst_flux_deviation", flux, tol)

    ts = np.arange(H + 1)
    low_up = np.array([rough_bounds(table, tr, int(t)) for t in ts])
    slack = min(float((rep.survival - low_up[:, 0]).min()), float((low_up[:, 1] - rep.survival).min()))
    checks.lower("rough_bound_slack", slack, -SLACK_TOL)
    checks.upper("leading_term_at_most_one", float(rep.leading.max()), 1.0 + SLACK_TOL)
    if H > 30:
        checks.lower("lower_chain_slack", float(lower_chain_slack(table, tr.lam).min()), -SLACK_TOL)

    ed = exit_decomposition(chain, tr, alpha, track)
    checks.upper("exit_decomposition_residual", float(ed.residual.max()), tol + ed.unresolved)

    _, profile = an.metastability()
    rows = exponential_bound_check(chain, tr, alpha, profile)
    if rows:
        checks.flag("exponential_bound", all(bound_holds(r) for r in rows))
    bound = {
        "checked": bool(rows),
        "rows": [
            {
                "n": r.n,
                "t": r.t,
                "deviation": r.deviation,
                "lower_ingredient": r.lower_ingredient,
                "upper_ingredient": r.upper_ingredient,
                "display_bound": r.display_bound,
                "proof_upper": r.proof_upper,
                "proof_lower": r.proof_lower,
                "holds": bound_holds(r),
            }
            for r in rows
        ],
    }

    before = track.tau1_pmf
    p_first = float(before.sum())
    mean_first = float((ts * before).sum() / p_first) if p_first > 0 else None
    if series is not None:
        series[name] = {"rep": rep, "track": track}
    return {
        "alpha": name,
        "horizon": H,
        "shift_factor": table.shift_factor,
        "delta": table.delta,
        "separation_at_0": float(table.sep[0]),
        "csqst": {
            "p_before_absorption": p_first,
            "mean_given_before_absorption": mean_first,
            "defect": dist.defect,
            "unresolved": dist.unresolved,
            "closed_form_residual": track.closed_form_residual,
            "flux_deviation": flux,
        },
        "representation": {
            "max_residual": rep.max_residual,
            "route_gap": rep.route_gap,
            "survival_at_horizon": float(rep.survival[-1]),
        },
        "rough_bound_slack": slack,
        "exponential_bound": bound,
        "exit_decomposition": {
            lab: {
                "exact": float(ed.exact[i]),
                "before_csqst": float(ed.from_layer0[i]),
                "after_csqst": float(ed.from_quasi_stationary[i]),
            }
            for i, lab in enumerate(chain.absorbing)
        },
        "exit_residual": float(ed.residual.max()),
    }


def _metastability_section(an: Analysis, checks: Checks) -> dict:
    R, profile = an.metastability()
    b = basin(an.triple, R.value)
    checks.flag("basin_gamma_bound", b.bound_holds, b.gamma_min)
    grid = min(50, an.profiles.horizon // 2)
    checks.lower("submultiplicativity_slack", submultiplicativity_slack(an.profiles, grid), -SLACK_TOL)
    return {
        "R": R.value,
        "R_tail_bound": R.tail_bound,
        "R_argmax": an.labels[R.argmax],
        "T": profile.T,
        "rate_a": profile.rate_a,
        "ratio": profile.ratio,
        "hypothesis": profile.hypothesis,
        "basin": {
            "time": b.time,
            "members": [an.labels[i] for i in b.members],
            "gamma_min": b.gamma_min,
            "bound_holds": b.bound_holds,
        },
    }


def build_report(
    chain: MarkovChain,
    alphas: list[tuple[str, np.ndarray]],
    horizon: int | None = None,
    tolerance: float = DEFAULT_TOLERANCE,
    seed: int | None = None,
    series: dict | None = None,
    semigroup: bool = False,
) -> dict:
    an = Analysis(chain, horizon, tolerance)
    checks = Checks()
    spectral = _spectral_section(an, checks)
    meta = _metastability_section(an, checks)
    sections = [analyze_alpha(an, name, a, checks, series) for name, a in alphas]
    if semigroup:
        for name, a in alphas:
            for t, u in SEMIGROUP_PAIRS:
                r = verify_semigroup(chain, an.triple, a, t, u)
                checks.upper("semigroup_residual", r.max_residual, tolerance)
    doc = {
        "tool": {"name": "hitlab", "version": __version__},
        "status": "PASSED" if checks.passed else "FAILED",
        "settings": {"horizon": horizon, "tolerance": tolerance, "seed": seed},
        "chain": {
            "states": chain.n,
            "transient": an.sub.size,
            "absorbing": list(chain.absorbing),
            "primitivity_exponent": an.sub.primitivity_exponent,
        },
        "spectral": spectral,
        "metastability": meta,
        "analyses": sections,
        "checks": checks.items,
        "failures": checks.failures(),
    }
    doc = _finite(doc)
    jsonschema.validate(doc, REPORT_SCHEMA)
    return doc


def default_alphas(chain: MarkovChain, triple: SpectralTriple | None = None, all_starts: bool = False):
    """Uniform on A, plus mu_star and every Dirac start when ``all_starts``."""
    out = [("uniform", uniform(chain))]
    if all_starts:
        if triple is not None:
            out.append(("mu_star", triple.embed(triple.mu_star)))
        out += [(f"dirac:{lab}", dirac(chain, lab)) for lab in chain.transient_labels]
    return out


def alpha_name(chain: MarkovChain, alpha) -> str:
    return describe_alpha(chain, np.asarray(alpha))


# ------------------------------------------------------------------ output


def dumps(doc) -> str:
    """Canonical serialization: fixed key order, shortest round-trip floats."""
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def write_series_csv(directory, series: dict) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, (name, data) in enumerate(series.items()):
        rep, track = data["rep"], data["track"]
        stem = f"alpha{i}"
        p1 = directory / f"{stem}_representation.csv"
        with open(p1, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "survival", "leading", "remainder", "residual"])
            for t in range(rep.horizon + 1):
                w.writerow([t] + [f"{v:.12g}" for v in (rep.survival[t], rep.leading[t],
                                                         rep.remainder[t], rep.residual[t])])
        p2 = directory / f"{stem}_csqst.csv"
        with open(p2, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "pmf", "survival", "absorbed"])
            for t in range(track.horizon + 1):
                w.writerow([t] + [f"{v:.12g}" for v in (track.tau1_pmf[t], track.tau1_survival[t],
                                                         track.absorbed[t].sum())])
        written += [p1, p2]
    index = directory / "index.csv"
    with open(index, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file_stem", "alpha"])
        for i, name in enumerate(series):
            w.writerow([f"alpha{i}", name])
    return written + [index]
