import csv

import numpy as np
import pytest

from hitlab.chain import absorption_profile, dirac, propagate, restrict, survival, uniform
from hitlab.csqst import control_minimal, ephemeral, tracking_recursion
from hitlab.errors import SimulationError
from hitlab.montecarlo import (
    SimulationConfig,
    conditional_law_test,
    marginal_z,
    sample_base,
    sample_tracking,
    survival_z,
    tau1_pmf_z,
    z_scores,
)
from hitlab.rim import RimParams, build_rim
from hitlab.spectral import hitting_measure, principal_triple, separation_table


def _tracking(chain, tr, alpha, config, horizon=None, snapshot_times=None):
    table = separation_table(chain, tr, alpha, horizon or config.horizon)
    control = control_minimal(table)
    samples = sample_tracking(chain, tr, table, control, alpha, config, snapshot_times)
    return samples, tracking_recursion(chain, tr, table.alpha, control)


def _rim(n, lam):
    chain = build_rim(RimParams(n, lam))
    return chain, principal_triple(restrict(chain))


@pytest.mark.parametrize(
    "kwargs",
    [dict(trajectories=0), dict(horizon=-1), dict(block=0), dict(seed=-1), dict(seed=2**64)],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SimulationConfig(**kwargs)


def test_two_state_survival(two_state, backend):
    chain, _ = two_state
    s = sample_base(chain, dirac(chain, "s0"), SimulationConfig(seed=1, trajectories=100_000, horizon=80))
    assert abs(survival_z(s, survival(chain, dirac(chain, "s0"), 80), [3])[0]) <= 3


def test_rim_odd_start_survival(backend):
    chain, _ = _rim(1, 0.5)
    alpha = uniform(chain, ["1", "3"])
    s = sample_base(chain, alpha, SimulationConfig(seed=2, trajectories=100_000, horizon=80))
    assert abs(survival_z(s, survival(chain, alpha, 80), [3])[0]) <= 3
    assert s.survival([3])[0] == pytest.approx(0.25, abs=3 * np.sqrt(0.25 * 0.75 / 1e5))


def test_random4_survival_grid(random4):
    chain, _ = random4
    alpha = uniform(chain)
    s = sample_base(chain, alpha, SimulationConfig(seed=3, trajectories=100_000, horizon=400))
    grid = np.arange(0, 61, 3)
    assert np.abs(survival_z(s, survival(chain, alpha, 400), grid)).max() <= 3


def test_tracking_from_mu_star(random4):
    chain, tr = random4
    s, _ = _tracking(chain, tr, tr.embed(tr.mu_star), SimulationConfig(seed=4, trajectories=20_000, horizon=300))
    assert np.all(s.tau1 == 0)


def test_tracking_rim_odd_start():
    chain, tr = _rim(1, 0.5)
    s, _ = _tracking(chain, tr, uniform(chain, ["1", "3"]), SimulationConfig(seed=5, trajectories=20_000, horizon=100))
    assert np.all(s.tau1 == 1)


def test_tracking_pmf_random4(random4, backend):
    chain, tr = random4
    config = SimulationConfig(seed=6, trajectories=100_000, horizon=400)
    s, track = _tracking(chain, tr, uniform(chain), config)
    assert np.abs(tau1_pmf_z(s, track.closed_form_pmf, np.arange(0, 40))).max() <= 3


def test_conditional_law_mu_star(random4):
    chain, tr = random4
    s, _ = _tracking(chain, tr, tr.embed(tr.mu_star), SimulationConfig(seed=7, trajectories=100_000, horizon=300))
    res = conditional_law_test(s, tr)
    assert res.n == 100_000
    assert res.passed


def test_conditional_law_random4(random4):
    chain, tr = random4
    s, _ = _tracking(chain, tr, dirac(chain, "x2"), SimulationConfig(seed=8, trajectories=200_000, horizon=400))
    assert conditional_law_test(s, tr).passed


def test_marginal_consistency(random4):
    chain, tr = random4
    alpha = dirac(chain, "x1")
    times = [0, 1, 2, 5, 10, 20]
    s, _ = _tracking(chain, tr, alpha, SimulationConfig(seed=9, trajectories=100_000, horizon=400),
                     snapshot_times=times)
    exact = np.array([propagate(chain, alpha, t) for t in times])
    assert np.abs(marginal_z(s, exact)).max() <= 3


def test_absorption_frequency(random4):
    chain, _ = random4
    alpha = uniform(chain)
    s = sample_base(chain, alpha, SimulationConfig(seed=10, trajectories=1_000_000, horizon=600))
    freq = np.array([np.mean(s.exit_state == g) for g in chain.goal])
    assert np.abs(z_scores(freq, absorption_profile(chain, alpha), s.size)).max() <= 3


def test_hitting_measure_frequency(random4):
    chain, tr = random4
    s = sample_base(chain, tr.embed(tr.mu_star), SimulationConfig(seed=11, trajectories=200_000, horizon=600))
    freq = np.array([np.mean(s.exit_state == g) for g in chain.goal])
    assert np.abs(z_scores(freq, hitting_measure(chain, tr), s.size)).max() <= 3


def test_ephemeral_rim_n2():
    chain, tr = _rim(2, 0.5)
    alpha = dirac(chain, "0")
    s, track = _tracking(chain, tr, alpha, SimulationConfig(seed=12, trajectories=1_000_000, horizon=200),
                         snapshot_times=[3])
    alive = (s.tau1 > 3) | (s.tau1 < 0)
    n = int(alive.sum())
    assert n / s.size == pytest.approx(track.tau1_survival[3], abs=3 * np.sqrt(track.tau1_survival[3] / s.size))
    states = s.snapshots[alive, 0]
    freq = np.bincount(states, minlength=chain.n)[tr.index] / n
    assert np.abs(z_scores(freq, ephemeral(track, 3), n)).max() <= 3


def test_deterministic(random4):
    chain, tr = random4
    config = SimulationConfig(seed=13, trajectories=30_000, horizon=300)
    a, _ = _tracking(chain, tr, uniform(chain), config)
    b, _ = _tracking(chain, tr, uniform(chain), config)
    assert a.summary(chain.n) == b.summary(chain.n)
    assert np.array_equal(a.tau_g, b.tau_g) and np.array_equal(a.x_tau1, b.x_tau1)


def test_block_size_does_not_change_samples(random4):
    chain, tr = random4
    runs = [
        _tracking(chain, tr, uniform(chain), SimulationConfig(seed=14, trajectories=10_000, horizon=300, block=b))[0]
        for b in (1_000, 4_096, 65_536)
    ]
    for other in runs[1:]:
        assert np.array_equal(runs[0].tau_g, other.tau_g)
        assert np.array_equal(runs[0].tau1, other.tau1)


def test_backends_agree(random4, monkeypatch):
    pytest.importorskip("numba")
    chain, tr = random4
    config = SimulationConfig(seed=15, trajectories=10_000, horizon=300)
    out = {}
    for name in ("numba", "numpy"):
        monkeypatch.setenv("HITLAB_BACKEND", name)
        s, _ = _tracking(chain, tr, uniform(chain), config, snapshot_times=[0, 7])
        assert s.backend == name
        out[name] = s
    for field in ("tau_g", "exit_state", "tau1", "x_tau1", "snapshots"):
        assert np.array_equal(getattr(out["numba"], field), getattr(out["numpy"], field))


def test_bad_backend(random4, monkeypatch):
    chain, _ = random4
    monkeypatch.setenv("HITLAB_BACKEND", "cuda")
    with pytest.raises(ValueError):
        sample_base(chain, uniform(chain), SimulationConfig(trajectories=10, horizon=10))


def test_censoring_guard(random4):
    chain, _ = random4
    with pytest.raises(SimulationError, match="censored"):
        sample_base(chain, uniform(chain), SimulationConfig(trajectories=1000, horizon=2))
    s = sample_base(chain, uniform(chain), SimulationConfig(trajectories=1000, horizon=2), check_censoring=False)
    assert s.censored > 0.01


def test_dump_csv(random4, tmp_path):
    chain, tr = random4
    s, _ = _tracking(chain, tr, uniform(chain), SimulationConfig(seed=16, trajectories=50, horizon=300))
    path = tmp_path / "samples.csv"
    s.dump_csv(path, chain.states)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 50
    assert {r["exit_state"] for r in rows} <= set(chain.absorbing)


def test_z_scores_degenerate_cells():
    z = z_scores([0.0, 1.0, 0.5, 0.1], [0.0, 1.0 + 1e-16, 0.5, 0.0], 100)
    assert z[0] == 0.0 and z[1] == 0.0 and z[2] == 0.0 and np.isinf(z[3])
