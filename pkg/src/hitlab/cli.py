"""Command-line interface: ``hitlab analyze | simulate | rim | verify``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, report
from .chain import (
    absorption_profile,
    parse_alpha,
    propagate,
    read_chain,
    survival,
    uniform,
    write_chain,
)
from .csqst import control_minimal, tracking_recursion
from .errors import ChainSpecError, HitlabError
from .hitting import default_horizon
from .montecarlo import (
    Z_POINTWISE,
    SimulationConfig,
    conditional_law_test,
    sample_tracking,
    survival_z,
    tau1_pmf_z,
    z_scores,
)
from .rim import N_CAP, RimParams, build_rim
from .spectral import separation_table

EXIT_OK = 0
EXIT_USAGE = 2
SIM_SURVIVAL_TARGET = 1e-4


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=Path, help="write the JSON document here instead of stdout")
    parser.add_argument("--csv-dir", type=Path, help="directory for per-t CSV series")
    parser.add_argument("--seed", type=int, default=0, help="64-bit simulation seed (default 0)")
    parser.add_argument("--horizon", type=int, help="time horizon; chosen automatically if omitted")
    parser.add_argument("--tolerance", type=float, default=report.DEFAULT_TOLERANCE,
                        help="residual tolerance (default 1e-10)")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hitlab", description=__doc__)
    p.add_argument("--version", action="version", version=f"hitlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="exact analysis report for a chain file")
    a.add_argument("chain", type=Path)
    a.add_argument("--alpha", help="dirac:<label> | uniform | uniform-set:<l1,l2,...> | weights:<file>")
    _common(a)

    s = sub.add_parser("simulate", help="Monte Carlo run compared with exact values")
    s.add_argument("chain", type=Path)
    s.add_argument("--alpha", help="start distribution, same forms as analyze (default uniform)")
    s.add_argument("--trajectories", type=_positive_int, default=100_000, help="number of trajectories (default 100000)")
    s.add_argument("--block", type=_positive_int, default=65_536,
                   help="trajectories per kernel call; does not change the samples")
    s.add_argument("--dump-samples", type=Path, help="write per-trajectory records as CSV")
    _common(s)

    r = sub.add_parser("rim", help="emit the rim chain as a chain-spec document")
    r.add_argument("--n", type=_positive_int, required=True, help="rim parameter; 2**(2n) transient states")
    r.add_argument("--lambda", dest="lam", type=float, required=True, help="principal eigenvalue in (0, 1)")
    r.add_argument("--emit", type=Path, help="output path (default: --out or stdout)")
    r.add_argument("--max-n", type=_positive_int, default=N_CAP, help=f"largest accepted n (default {N_CAP})")
    _common(r)

    v = sub.add_parser("verify", help="run the full invariant suite on a chain file")
    v.add_argument("chain", type=Path)
    _common(v)
    return p


def _load(path: Path):
    try:
        return read_chain(path)
    except FileNotFoundError:
        raise ChainSpecError(f"{path}: no such file") from None


def _alpha(chain, doc_alpha, flag):
    if flag:
        try:
            return flag, parse_alpha(chain, flag)
        except (KeyError, ValueError, OSError) as exc:
            raise ChainSpecError(f"bad --alpha {flag!r}: {exc}") from None
    if doc_alpha is not None:
        return "document", doc_alpha
    return "uniform", uniform(chain)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def cmd_analyze(args) -> int:
    chain, doc_alpha = _load(args.chain)
    name, alpha = _alpha(chain, doc_alpha, args.alpha)
    series = {} if args.csv_dir else None
    doc = report.build_report(chain, [(name, alpha)], args.horizon, args.tolerance,
                              series=series)
    _emit(report.dumps(doc), args.out)
    if series:
        report.write_series_csv(args.csv_dir, series)
    return EXIT_OK if doc["status"] == "PASSED" else 5


def cmd_verify(args) -> int:
    chain, _ = _load(args.chain)
    an_triple = report.Analysis(chain, args.horizon, args.tolerance).triple
    alphas = report.default_alphas(chain, an_triple, all_starts=True)
    doc = report.build_report(chain, alphas, args.horizon, args.tolerance, semigroup=True)
    if args.out is not None:
        args.out.write_text(report.dumps(doc))
    for key, item in doc["checks"].items():
        print(f"{'PASS' if item['passed'] else 'FAIL'}  {key}  value={item['value']!r}")
    print(doc["status"])
    return EXIT_OK if doc["status"] == "PASSED" else 5


def _sim_horizon(chain, alpha, table_h: int) -> int:
    """Smallest t with ``P(tau_G > t)`` below the target, but at least ``table_h``."""
    A = chain.transient
    mu = alpha.copy()
    t, mass = 0, mu[A].sum()
    while mass > SIM_SURVIVAL_TARGET and t < 10**5:
        mu = mu @ chain.P
        t += 1
        mass = mu[A].sum()
    return max(t, table_h)


def cmd_simulate(args) -> int:
    chain, doc_alpha = _load(args.chain)
    name, alpha = _alpha(chain, doc_alpha, args.alpha)
    an = report.Analysis(chain, args.horizon, args.tolerance)
    tr = an.triple
    if args.horizon is not None:
        H = args.horizon
    else:
        H = _sim_horizon(chain, alpha, default_horizon(tr, alpha))
    table = separation_table(chain, tr, alpha, H)
    control = control_minimal(table)
    config = SimulationConfig(seed=args.seed, trajectories=args.trajectories,
                              horizon=H, block=args.block)
    samples = sample_tracking(chain, tr, table, control, alpha, config)
    track = tracking_recursion(chain, tr, table.alpha, control)

    grid = np.unique(np.concatenate([np.arange(min(H, 10) + 1),
                                     np.linspace(0, min(H, 100), 11).astype(int)]))
    exact_surv = survival(chain, alpha, H)
    z_surv = survival_z(samples, exact_surv, grid)
    z_pmf = tau1_pmf_z(samples, track.closed_form_pmf, grid)
    # trajectories still alive at H have no exit state, so compare with P(X_tau = g, tau <= H)
    exit_exact = propagate(chain, alpha, H)[chain.goal]
    exit_freq = np.array([np.mean(samples.exit_state == g) for g in chain.goal])
    z_exit = z_scores(exit_freq, exit_exact, samples.size)
    law = conditional_law_test(samples, tr)

    def worst(z):
        return float(np.abs(z).max()) if len(z) else 0.0

    checks = {
        "survival_max_z": {"value": worst(z_surv), "limit": Z_POINTWISE, "passed": worst(z_surv) <= Z_POINTWISE},
        "tau1_pmf_max_z": {"value": worst(z_pmf), "limit": Z_POINTWISE, "passed": worst(z_pmf) <= Z_POINTWISE},
        "exit_max_z": {"value": worst(z_exit), "limit": Z_POINTWISE, "passed": worst(z_exit) <= Z_POINTWISE},
        "conditional_law": {
            "tv": law.tv,
            "tv_limit": law.tv_threshold,
            "max_z": law.max_z,
            "z_limit": law.z_threshold,
            "n_conditional": law.n,
            "passed": law.passed,
        },
    }
    ok = all(c["passed"] for c in checks.values())
    doc = {
        "tool": {"name": "hitlab", "version": __version__},
        "status": "PASSED" if ok else "FAILED",
        "alpha": name,
        "summary": samples.summary(chain.n, grid),
        "exact": {
            "survival": [float(exact_surv[t]) for t in grid],
            "tau1_pmf": [float(track.closed_form_pmf[t]) for t in grid],
            "exit_by_horizon": {lab: float(v) for lab, v in zip(chain.absorbing, exit_exact)},
            "exit": {lab: float(v) for lab, v in zip(chain.absorbing, absorption_profile(chain, alpha))},
        },
        "checks": checks,
    }
    _emit(report.dumps(report._finite(doc)), args.out)
    if args.dump_samples:
        samples.dump_csv(args.dump_samples, chain.states)
    return EXIT_OK if ok else 5


def cmd_rim(args) -> int:
    if args.n > args.max_n:
        raise ChainSpecError(f"--n {args.n} exceeds --max-n {args.max_n}")
    try:
        chain = build_rim(RimParams(args.n, args.lam), max_n=args.max_n)
    except ValueError as exc:
        raise ChainSpecError(str(exc)) from None
    target = args.emit or args.out
    if target is None:
        sys.stdout.write(json.dumps(chain.to_document(), separators=(",", ":")) + "\n")
    else:
        write_chain(chain, target)
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "rim": cmd_rim, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.horizon is not None and args.horizon < 0:
        parser.error("--horizon must be nonnegative")
    if not (args.tolerance > 0 and math.isfinite(args.tolerance)):
        parser.error("--tolerance must be a positive number")
    try:
        return COMMANDS[args.command](args)
    except HitlabError as exc:
        print(f"hitlab: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
